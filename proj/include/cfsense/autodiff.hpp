#pragma once

// Minimal reverse-mode automatic differentiation on an arena tape.
// A Var carries its value inline plus an index into the tape; constants
// have index -1 and cost no tape storage, so mixing recorded variables
// with large blocks of constant data stays cheap. Every operation has at
// most two parents with precomputed local partials; gradients come from a
// single reverse sweep.

#include <cassert>
#include <cmath>
#include <cstdint>
#include <vector>

namespace cfsense::ad {

class Tape;

class Var {
 public:
  Var() = default;
  Var(double v) : val_(v) {}  // constant; intentionally implicit

  double value() const { return val_; }
  bool on_tape() const { return tape_ != nullptr; }

  Var& operator+=(const Var& o);
  Var& operator-=(const Var& o);
  Var& operator*=(const Var& o);
  Var& operator/=(const Var& o);

 private:
  friend class Tape;
  friend Tape* pick_tape(const Var&, const Var&);
  friend Var operator+(const Var&, const Var&);
  friend Var operator-(const Var&, const Var&);
  friend Var operator*(const Var&, const Var&);
  friend Var operator/(const Var&, const Var&);
  friend Var operator-(const Var&);
  friend Var tanh(const Var&);
  friend Var exp(const Var&);
  friend Var log(const Var&);
  friend Var sqrt(const Var&);
  friend double tape_grad_of(const std::vector<double>&, const Var&);

  Var(double v, std::int32_t idx, Tape* tape)
      : val_(v), idx_(idx), tape_(tape) {}

  double val_ = 0.0;
  std::int32_t idx_ = -1;
  Tape* tape_ = nullptr;
};

class Tape {
 public:
  Var variable(double v) {
    nodes_.push_back(Node{-1, -1, 0.0, 0.0});
    return Var(v, static_cast<std::int32_t>(nodes_.size() - 1), this);
  }

  void clear() { nodes_.clear(); }
  void reserve(std::size_t n) { nodes_.reserve(n); }
  std::size_t size() const { return nodes_.size(); }

  Var unary(double val, const Var& a, double da) {
    nodes_.push_back(Node{a.idx_, -1, da, 0.0});
    return Var(val, static_cast<std::int32_t>(nodes_.size() - 1), this);
  }

  Var binary(double val, const Var& a, double da, const Var& b, double db) {
    nodes_.push_back(Node{a.idx_, b.idx_, da, db});
    return Var(val, static_cast<std::int32_t>(nodes_.size() - 1), this);
  }

  // Adjoints of every tape node with respect to `output`; zeros when the
  // output is a constant. Read individual gradients via grad().
  std::vector<double> gradient(const Var& output) const {
    std::vector<double> adj(nodes_.size(), 0.0);
    if (output.idx_ < 0) return adj;
    adj[static_cast<std::size_t>(output.idx_)] = 1.0;
    for (std::int32_t i = output.idx_; i >= 0; --i) {
      const double a = adj[static_cast<std::size_t>(i)];
      if (a == 0.0) continue;
      const Node& n = nodes_[static_cast<std::size_t>(i)];
      if (n.p0 >= 0) adj[static_cast<std::size_t>(n.p0)] += n.d0 * a;
      if (n.p1 >= 0) adj[static_cast<std::size_t>(n.p1)] += n.d1 * a;
    }
    return adj;
  }

  static double grad(const std::vector<double>& adjoints, const Var& v);

 private:
  friend class Var;

  struct Node {
    std::int32_t p0;
    std::int32_t p1;
    double d0;
    double d1;
  };
  std::vector<Node> nodes_;
};

inline double tape_grad_of(const std::vector<double>& adjoints, const Var& v) {
  return v.idx_ >= 0 ? adjoints[static_cast<std::size_t>(v.idx_)] : 0.0;
}

inline double Tape::grad(const std::vector<double>& adjoints, const Var& v) {
  return tape_grad_of(adjoints, v);
}

// The tape an operation records to: whichever operand is recorded.
// Mixing variables from two live tapes is a programming error.
inline Tape* pick_tape(const Var& a, const Var& b) {
  assert(!(a.tape_ && b.tape_ && a.tape_ != b.tape_));
  return a.tape_ ? a.tape_ : b.tape_;
}

inline Var operator+(const Var& a, const Var& b) {
  Tape* t = pick_tape(a, b);
  if (!t) return Var(a.val_ + b.val_);
  return t->binary(a.val_ + b.val_, a, 1.0, b, 1.0);
}

inline Var operator-(const Var& a, const Var& b) {
  Tape* t = pick_tape(a, b);
  if (!t) return Var(a.val_ - b.val_);
  return t->binary(a.val_ - b.val_, a, 1.0, b, -1.0);
}

inline Var operator*(const Var& a, const Var& b) {
  Tape* t = pick_tape(a, b);
  if (!t) return Var(a.val_ * b.val_);
  return t->binary(a.val_ * b.val_, a, b.val_, b, a.val_);
}

inline Var operator/(const Var& a, const Var& b) {
  Tape* t = pick_tape(a, b);
  if (!t) return Var(a.val_ / b.val_);
  return t->binary(a.val_ / b.val_, a, 1.0 / b.val_, b,
                   -a.val_ / (b.val_ * b.val_));
}

inline Var operator-(const Var& a) {
  if (!a.tape_) return Var(-a.val_);
  return a.tape_->unary(-a.val_, a, -1.0);
}

inline Var tanh(const Var& a) {
  const double th = std::tanh(a.val_);
  if (!a.tape_) return Var(th);
  return a.tape_->unary(th, a, 1.0 - th * th);
}

inline Var exp(const Var& a) {
  const double e = std::exp(a.val_);
  if (!a.tape_) return Var(e);
  return a.tape_->unary(e, a, e);
}

inline Var log(const Var& a) {
  const double l = std::log(a.val_);
  if (!a.tape_) return Var(l);
  return a.tape_->unary(l, a, 1.0 / a.val_);
}

inline Var sqrt(const Var& a) {
  const double s = std::sqrt(a.val_);
  if (!a.tape_) return Var(s);
  return a.tape_->unary(s, a, 0.5 / s);
}

// Mixed-scalar overloads so generic code written for doubles keeps working.
inline Var operator+(const Var& a, double b) { return a + Var(b); }
inline Var operator+(double a, const Var& b) { return Var(a) + b; }
inline Var operator-(const Var& a, double b) { return a - Var(b); }
inline Var operator-(double a, const Var& b) { return Var(a) - b; }
inline Var operator*(const Var& a, double b) { return a * Var(b); }
inline Var operator*(double a, const Var& b) { return Var(a) * b; }
inline Var operator/(const Var& a, double b) { return a / Var(b); }
inline Var operator/(double a, const Var& b) { return Var(a) / b; }

inline Var& Var::operator+=(const Var& o) { return *this = *this + o; }
inline Var& Var::operator-=(const Var& o) { return *this = *this - o; }
inline Var& Var::operator*=(const Var& o) { return *this = *this * o; }
inline Var& Var::operator/=(const Var& o) { return *this = *this / o; }

// Value-based comparisons; only used for control flow that is locally
// constant in the inputs (pivot checks, clamps).
inline bool operator<(const Var& a, const Var& b) { return a.value() < b.value(); }
inline bool operator>(const Var& a, const Var& b) { return a.value() > b.value(); }
inline bool operator<=(const Var& a, const Var& b) { return a.value() <= b.value(); }
inline bool operator>=(const Var& a, const Var& b) { return a.value() >= b.value(); }

inline bool isfinite(const Var& a) { return std::isfinite(a.value()); }

// Found by argument-dependent lookup from generic code in cfsense.
inline double scalar_value(const Var& v) { return v.value(); }

}  // namespace cfsense::ad
