#pragma once

#include <complex>
#include <cstdint>
#include <functional>
#include <iosfwd>
#include <string>
#include <variant>
#include <vector>

#include <Eigen/Dense>

namespace ddismc {

using Eigen::MatrixXd;
using Eigen::VectorXd;
using Complex = std::complex<double>;

// Real polynomial, coefficients in ascending degree.
using Poly = std::vector<double>;

namespace poly {
Poly trim(const Poly& p);
int degree(const Poly& p);  // -1 for the zero polynomial
Poly add(const Poly& a, const Poly& b);
Poly scale(const Poly& a, double c);
Poly mul(const Poly& a, const Poly& b);
Poly pow(const Poly& a, int k);
Complex eval(const Poly& p, Complex s);
std::vector<Complex> roots(const Poly& p);
// Polynomial division a = q*b + r.
void divmod(const Poly& a, const Poly& b, Poly* q, Poly* r);
}  // namespace poly

class StateSpace {
 public:
  StateSpace() = default;
  StateSpace(MatrixXd A, MatrixXd B, MatrixXd C, MatrixXd D);

  // Pure gain with zero states.
  static StateSpace gain(const MatrixXd& D);

  const MatrixXd& A() const { return A_; }
  const MatrixXd& B() const { return B_; }
  const MatrixXd& C() const { return C_; }
  const MatrixXd& D() const { return D_; }
  int n() const { return static_cast<int>(A_.rows()); }
  int m() const { return static_cast<int>(B_.cols()); }
  int p() const { return static_cast<int>(C_.rows()); }

  Eigen::MatrixXcd freq_response(double omega) const;

 private:
  MatrixXd A_, B_, C_, D_;
};

struct RationalEntry {
  Poly num;
  Poly den{1.0};
};

class RationalMatrix {
 public:
  RationalMatrix() = default;
  RationalMatrix(int rows, int cols);

  static RationalMatrix identity(int m);
  static RationalMatrix diagonal(const std::vector<RationalEntry>& d);
  static RationalMatrix scalar(const Poly& num, const Poly& den);

  int rows() const { return rows_; }
  int cols() const { return cols_; }
  const RationalEntry& operator()(int i, int j) const;
  void set(int i, int j, Poly num, Poly den);

  bool is_zero(int i, int j) const;
  // num degree minus den degree; INT_MIN for a zero entry.
  int excess(int i, int j) const;
  int max_excess() const;
  bool proper() const { return max_excess() <= 0; }
  Complex eval(int i, int j, Complex s) const;
  Eigen::MatrixXcd eval(Complex s) const;
  bool has_origin_pole() const;
  std::vector<double> imag_pole_freqs(double tol = 1e-10) const;

 private:
  int rows_ = 0;
  int cols_ = 0;
  std::vector<RationalEntry> e_;
};

class SampledSignal {
 public:
  SampledSignal() = default;
  SampledSignal(double t0, double tau, MatrixXd values);
  static SampledSignal zeros(double t0, double tau, int T, int m);

  double t0() const { return t0_; }
  double tau() const { return tau_; }
  int T() const { return static_cast<int>(v_.rows()); }
  int channels() const { return static_cast<int>(v_.cols()); }
  double time(int k) const { return t0_ + tau_ * k; }
  double duration() const { return tau_ * (T() - 1); }
  const MatrixXd& values() const { return v_; }
  MatrixXd& values() { return v_; }
  VectorXd row(int k) const { return v_.row(k).transpose(); }
  // Zero-order hold lookup, clamped at both ends.
  VectorXd hold(double t) const;
  // Every k-th sample.
  SampledSignal decimate(int k) const;
  SampledSignal channel(int j) const;

  void write_csv(std::ostream& os) const;
  void write_csv(const std::string& path) const;
  static SampledSignal read_csv(std::istream& is);
  static SampledSignal read_csv(const std::string& path);

 private:
  double t0_ = 0.0;
  double tau_ = 1.0;
  MatrixXd v_;
};

// Shortest decimal string that reads back to the same double.
std::string format_double(double x);

using FeedbackLaw = std::function<VectorXd(double t, const VectorXd& x)>;
using ControlSource = std::variant<SampledSignal, FeedbackLaw>;

struct SimResult {
  SampledSignal x;
  SampledSignal y;
};

SimResult simulate(const StateSpace& sys, const ControlSource& input, const VectorXd& x0,
                   double horizon, double dt);

StateSpace realize(const RationalMatrix& tf, double rank_tol = 1e-9);

// Kalman trim to the controllable and observable part.
StateSpace minimal(const StateSpace& sys, double rank_tol = 1e-9);

struct ZerosResult {
  std::vector<Complex> zeros;
  bool degenerate = false;  // normal rank deficient everywhere
};

ZerosResult invariant_zeros(const StateSpace& sys, double inf_threshold = 1e8);

struct FreqPoint {
  double omega = 0.0;
  Eigen::MatrixXcd value;
  bool at_pole = false;
};

std::vector<FreqPoint> freq_response(const RationalMatrix& tf, const std::vector<double>& omegas);

struct FilterOptions {
  double guard_fraction = 0.8;
  double taper = 0.1;
  int max_excess = 4;
  // Improper operators: keep the record and fill the padding with a smooth join
  // from the last sample back to the first instead of tapering the record.
  bool bridge = false;
};

// Linear operator given by its frequency response; used for operators that are
// not stored as a RationalMatrix, such as the inverse of a reference model.
struct FrequencyOperator {
  int rows = 0;
  int cols = 0;
  std::function<Eigen::MatrixXcd(Complex s)> eval;
  int excess = 0;              // high-frequency growth order
  bool integrator = false;     // pole at the origin
  std::vector<double> imag_pole_freqs;  // |omega| of poles on the imaginary axis, origin excluded
};

FrequencyOperator to_frequency_operator(const RationalMatrix& op);

struct FilterReport {
  bool bin_shifted = false;
  int fft_length = 0;
};

SampledSignal offline_filter(const RationalMatrix& op, const SampledSignal& x,
                             const FilterOptions& opt = {}, FilterReport* report = nullptr);
SampledSignal offline_filter(const FrequencyOperator& op, const SampledSignal& x,
                             const FilterOptions& opt = {}, FilterReport* report = nullptr);

SampledSignal prbs(int channels, double horizon, double tau, const std::vector<double>& amplitude,
                   double bit_period, std::uint64_t seed);

}  // namespace ddismc
