#include "stiffode/systems.hpp"

#include <cctype>
#include <fstream>
#include <sstream>

namespace stiffode {

namespace {

// "<coef>*S<i>" or "S<i>"; returns (species index, coefficient)
std::pair<int, int> parse_term(const std::string& term, int line_no) {
  std::string s;
  for (char ch : term)
    if (!std::isspace(static_cast<unsigned char>(ch))) s += ch;
  if (s.empty())
    throw ParseError("line " + std::to_string(line_no) + ": empty term");
  int coef = 1;
  size_t pos = 0;
  const size_t star = s.find('*');
  if (star != std::string::npos) {
    try {
      coef = std::stoi(s.substr(0, star));
    } catch (const std::exception&) {
      throw ParseError("line " + std::to_string(line_no) +
                       ": bad coefficient in '" + term + "'");
    }
    pos = star + 1;
  }
  if (pos >= s.size() || s[pos] != 'S')
    throw ParseError("line " + std::to_string(line_no) +
                     ": expected species token in '" + term + "'");
  int idx;
  try {
    idx = std::stoi(s.substr(pos + 1));
  } catch (const std::exception&) {
    throw ParseError("line " + std::to_string(line_no) +
                     ": bad species index in '" + term + "'");
  }
  return {idx, coef};
}

void parse_side(const std::string& side, int line_no,
                std::map<int, int>& out) {
  std::stringstream ss(side);
  std::string term;
  while (std::getline(ss, term, '+')) {
    bool blank = true;
    for (char ch : term)
      if (!std::isspace(static_cast<unsigned char>(ch))) blank = false;
    if (blank) continue;
    auto [idx, coef] = parse_term(term, line_no);
    out[idx - 1] += coef;  // file uses 1-based species labels
  }
}

}  // namespace

void validate_network(const ReactionNetwork& net) {
  if (net.species <= 0)
    throw ValidationError("network: species count must be positive");
  for (size_t i = 0; i < net.reactions.size(); ++i) {
    const Reaction& r = net.reactions[i];
    const std::string tag = "reaction " + std::to_string(i + 1);
    if (!(r.rate > 0.0) || !std::isfinite(r.rate))
      throw ValidationError(tag + ": non-positive rate constant");
    int order = 0;
    for (const auto& [s, coef] : r.reactants) {
      if (s < 0 || s >= net.species)
        throw ValidationError(tag + ": species index out of range");
      if (coef <= 0) throw ValidationError(tag + ": bad stoichiometry");
      order += coef;
    }
    for (const auto& [s, coef] : r.products) {
      if (s < 0 || s >= net.species)
        throw ValidationError(tag + ": species index out of range");
      if (coef <= 0) throw ValidationError(tag + ": bad stoichiometry");
    }
    if (order < 1 || order > 2)
      throw ValidationError(tag + ": only first/second order supported");
  }
}

ReactionNetwork parse_network(const std::string& text) {
  ReactionNetwork net;
  std::stringstream in(text);
  std::string line;
  int line_no = 0;
  bool have_species = false;
  while (std::getline(in, line)) {
    ++line_no;
    const size_t hash = line.find('#');
    if (hash != std::string::npos) line = line.substr(0, hash);
    std::stringstream ls(line);
    std::string word;
    if (!(ls >> word)) continue;
    if (word == "species") {
      if (!(ls >> net.species))
        throw ParseError("line " + std::to_string(line_no) +
                         ": bad species count");
      have_species = true;
    } else if (word == "k") {
      if (!have_species)
        throw ParseError("line " + std::to_string(line_no) +
                         ": reaction before species header");
      Reaction r;
      if (!(ls >> r.rate))
        throw ParseError("line " + std::to_string(line_no) +
                         ": bad rate constant");
      std::string rest;
      std::getline(ls, rest);
      const size_t semi = rest.find(';');
      if (semi == std::string::npos)
        throw ParseError("line " + std::to_string(line_no) +
                         ": expected ';' after rate");
      rest = rest.substr(semi + 1);
      const size_t arrow = rest.find("->");
      if (arrow == std::string::npos)
        throw ParseError("line " + std::to_string(line_no) +
                         ": expected '->'");
      parse_side(rest.substr(0, arrow), line_no, r.reactants);
      parse_side(rest.substr(arrow + 2), line_no, r.products);
      if (r.reactants.empty())
        throw ParseError("line " + std::to_string(line_no) +
                         ": reaction has no reactants");
      net.reactions.push_back(std::move(r));
    } else {
      throw ParseError("line " + std::to_string(line_no) +
                       ": unknown directive '" + word + "'");
    }
  }
  if (!have_species) throw ParseError("missing 'species' header");
  validate_network(net);
  return net;
}

ReactionNetwork load_network(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ParseError("cannot open network file: " + path);
  std::stringstream buf;
  buf << in.rdbuf();
  return parse_network(buf.str());
}

void save_network(const ReactionNetwork& net, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw ParseError("cannot write network file: " + path);
  out << "species " << net.species << "\n";
  out.precision(17);
  for (const Reaction& r : net.reactions) {
    out << "k " << r.rate << " ; ";
    bool first = true;
    for (const auto& [s, coef] : r.reactants) {
      if (!first) out << " + ";
      first = false;
      if (coef != 1) out << coef << "*";
      out << "S" << (s + 1);
    }
    out << " -> ";
    first = true;
    for (const auto& [s, coef] : r.products) {
      if (!first) out << " + ";
      first = false;
      if (coef != 1) out << coef << "*";
      out << "S" << (s + 1);
    }
    out << "\n";
  }
}

VectorXd pollu_y0() {
  VectorXd y = VectorXd::Zero(20);
  y[1] = 0.2;    // NO
  y[3] = 0.04;   // O3
  y[6] = 0.1;    // HCHO
  y[7] = 0.3;    // CO
  y[16] = 0.007; // SO2
  return y;
}

}  // namespace stiffode
