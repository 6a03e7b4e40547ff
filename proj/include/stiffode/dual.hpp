#pragma once

#include <Eigen/Core>

#include <cmath>
#include <type_traits>

namespace stiffode {

/// Forward-mode dual number carrying N simultaneous perturbation directions.
/// T may itself be a Dual, which yields exact second-order propagation for
/// Jacobians evaluated inside an already-differentiated computation.
template <class T, int N>
struct Dual {
  T val;
  Eigen::Matrix<T, N, 1> der;

  Dual() : val(T(0)) { der.setZero(); }
  Dual(const T& v) : val(v) { der.setZero(); }  // NOLINT: implicit by design
  template <class U, class = std::enable_if_t<std::is_arithmetic_v<U> &&
                                              !std::is_same_v<U, T>>>
  Dual(U v) : val(T(double(v))) {  // NOLINT
    der.setZero();
  }
  Dual(const T& v, const Eigen::Matrix<T, N, 1>& d) : val(v), der(d) {}

  static Dual seeded(const T& v, int lane) {
    Dual r(v);
    r.der[lane] = T(1);
    return r;
  }

  Dual& operator+=(const Dual& o) {
    val += o.val;
    der += o.der;
    return *this;
  }
  Dual& operator-=(const Dual& o) {
    val -= o.val;
    der -= o.der;
    return *this;
  }
  Dual& operator*=(const Dual& o) {
    der = der * o.val + o.der * val;
    val *= o.val;
    return *this;
  }
  Dual& operator/=(const Dual& o) {
    const T inv = T(1) / o.val;
    val *= inv;
    der = (der - o.der * val) * inv;
    return *this;
  }
};

template <class T, int N>
inline Dual<T, N> operator+(const Dual<T, N>& a, const Dual<T, N>& b) {
  return {a.val + b.val, a.der + b.der};
}
template <class T, int N>
inline Dual<T, N> operator-(const Dual<T, N>& a, const Dual<T, N>& b) {
  return {a.val - b.val, a.der - b.der};
}
template <class T, int N>
inline Dual<T, N> operator-(const Dual<T, N>& a) {
  return {-a.val, -a.der};
}
template <class T, int N>
inline Dual<T, N> operator+(const Dual<T, N>& a) {
  return a;
}
template <class T, int N>
inline Dual<T, N> operator*(const Dual<T, N>& a, const Dual<T, N>& b) {
  return {a.val * b.val, a.der * b.val + b.der * a.val};
}
template <class T, int N>
inline Dual<T, N> operator/(const Dual<T, N>& a, const Dual<T, N>& b) {
  const T q = a.val / b.val;
  return {q, (a.der - b.der * q) * (T(1) / b.val)};
}

// Mixed double/Dual arithmetic; double promotes to a constant dual.
template <class T, int N>
inline Dual<T, N> operator+(const Dual<T, N>& a, double b) {
  return {a.val + T(b), a.der};
}
template <class T, int N>
inline Dual<T, N> operator+(double a, const Dual<T, N>& b) {
  return b + a;
}
template <class T, int N>
inline Dual<T, N> operator-(const Dual<T, N>& a, double b) {
  return {a.val - T(b), a.der};
}
template <class T, int N>
inline Dual<T, N> operator-(double a, const Dual<T, N>& b) {
  return {T(a) - b.val, -b.der};
}
template <class T, int N>
inline Dual<T, N> operator*(const Dual<T, N>& a, double b) {
  return {a.val * T(b), a.der * T(b)};
}
template <class T, int N>
inline Dual<T, N> operator*(double a, const Dual<T, N>& b) {
  return b * a;
}
template <class T, int N>
inline Dual<T, N> operator/(const Dual<T, N>& a, double b) {
  const T inv = T(1) / T(b);
  return {a.val * inv, a.der * inv};
}
template <class T, int N>
inline Dual<T, N> operator/(double a, const Dual<T, N>& b) {
  return Dual<T, N>(a) / b;
}

// Comparisons act on values; step-size control and pivoting are driven by
// primal magnitudes only.
template <class T, int N>
inline bool operator<(const Dual<T, N>& a, const Dual<T, N>& b) {
  return a.val < b.val;
}
template <class T, int N>
inline bool operator>(const Dual<T, N>& a, const Dual<T, N>& b) {
  return a.val > b.val;
}
template <class T, int N>
inline bool operator<=(const Dual<T, N>& a, const Dual<T, N>& b) {
  return a.val <= b.val;
}
template <class T, int N>
inline bool operator>=(const Dual<T, N>& a, const Dual<T, N>& b) {
  return a.val >= b.val;
}
template <class T, int N>
inline bool operator==(const Dual<T, N>& a, const Dual<T, N>& b) {
  return a.val == b.val;
}
template <class T, int N>
inline bool operator!=(const Dual<T, N>& a, const Dual<T, N>& b) {
  return a.val != b.val;
}
template <class T, int N>
inline bool operator<(const Dual<T, N>& a, double b) {
  return a.val < T(b);
}
template <class T, int N>
inline bool operator>(const Dual<T, N>& a, double b) {
  return a.val > T(b);
}

inline double value_of(double x) { return x; }
template <class T, int N>
inline double value_of(const Dual<T, N>& x) {
  return value_of(x.val);
}

inline bool finite_value(double x) { return std::isfinite(x); }
template <class T, int N>
inline bool finite_value(const Dual<T, N>& x) {
  return finite_value(x.val);
}

using std::abs;
using std::cos;
using std::erf;
using std::erfc;
using std::exp;
using std::log;
using std::pow;
using std::sin;
using std::sqrt;
using std::tanh;

template <class T, int N>
inline Dual<T, N> abs(const Dual<T, N>& x) {
  return x.val < T(0) ? -x : x;
}
template <class T, int N>
inline Dual<T, N> sqrt(const Dual<T, N>& x) {
  const T r = sqrt(x.val);
  return {r, x.der * (T(1) / (T(2) * r))};
}
template <class T, int N>
inline Dual<T, N> exp(const Dual<T, N>& x) {
  const T e = exp(x.val);
  return {e, x.der * e};
}
template <class T, int N>
inline Dual<T, N> log(const Dual<T, N>& x) {
  return {log(x.val), x.der * (T(1) / x.val)};
}
template <class T, int N>
inline Dual<T, N> sin(const Dual<T, N>& x) {
  return {sin(x.val), x.der * cos(x.val)};
}
template <class T, int N>
inline Dual<T, N> cos(const Dual<T, N>& x) {
  return {cos(x.val), x.der * (-sin(x.val))};
}
template <class T, int N>
inline Dual<T, N> tanh(const Dual<T, N>& x) {
  const T t = tanh(x.val);
  return {t, x.der * (T(1) - t * t)};
}
// d/dx erf(x) = 2/sqrt(pi) exp(-x^2)
template <class T, int N>
inline Dual<T, N> erf(const Dual<T, N>& x) {
  const T d = T(1.1283791670955126) * exp(-x.val * x.val);
  return {erf(x.val), x.der * d};
}
template <class T, int N>
inline Dual<T, N> erfc(const Dual<T, N>& x) {
  const T d = T(-1.1283791670955126) * exp(-x.val * x.val);
  return {erfc(x.val), x.der * d};
}
template <class T, int N>
inline Dual<T, N> pow(const Dual<T, N>& x, int k) {
  Dual<T, N> r(T(1));
  for (int i = 0; i < k; ++i) r *= x;
  return r;
}

}  // namespace stiffode

namespace Eigen {

template <class T, int N>
struct NumTraits<stiffode::Dual<T, N>> : NumTraits<T> {
  using Real = stiffode::Dual<T, N>;
  using NonInteger = stiffode::Dual<T, N>;
  using Nested = stiffode::Dual<T, N>;
  using Literal = typename NumTraits<T>::Literal;
  enum {
    IsComplex = 0,
    IsInteger = 0,
    IsSigned = 1,
    RequireInitialization = 1,
    ReadCost = (N + 1) * NumTraits<T>::ReadCost,
    AddCost = (N + 1) * NumTraits<T>::AddCost,
    MulCost = (2 * N + 1) * NumTraits<T>::MulCost,
  };
  static inline Real epsilon() { return Real(NumTraits<T>::epsilon()); }
  static inline Real dummy_precision() {
    return Real(NumTraits<T>::dummy_precision());
  }
  static inline Real highest() { return Real(NumTraits<T>::highest()); }
  static inline Real lowest() { return Real(NumTraits<T>::lowest()); }
  static inline int digits10() { return NumTraits<T>::digits10(); }
};

}  // namespace Eigen
