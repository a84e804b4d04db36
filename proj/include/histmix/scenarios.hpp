#pragma once

// True data-generating mixtures, sampling, and exact bin masses.

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <string>
#include <vector>

#include <boost/math/special_functions/beta.hpp>
#include <boost/math/special_functions/erf.hpp>
#include <nlohmann/json.hpp>

#include "histmix/error.hpp"
#include "histmix/model.hpp"
#include "histmix/partition.hpp"
#include "histmix/rng.hpp"

namespace histmix {

/// Emission density on [0,1]: uniform, a normal truncated to [0,1], or beta.
class Emission {
 public:
  enum class Kind { uniform, truncated_normal, beta };

  static Emission uniform() { return Emission(Kind::uniform, 0.0, 0.0); }

  static Emission truncated_normal(double mean, double sd) {
    if (!(sd > 0.0) || !std::isfinite(mean))
      fail(ErrorKind::config, "truncated normal needs a finite mean and positive sd");
    Emission e(Kind::truncated_normal, mean, sd);
    e.lo_cdf_ = std_normal_cdf((0.0 - mean) / sd);
    e.hi_ccdf_ = std_normal_ccdf((1.0 - mean) / sd);
    e.mass_ = 1.0 - e.lo_cdf_ - e.hi_ccdf_;
    if (!(e.mass_ > 0.0)) fail(ErrorKind::config, "truncated normal has no mass on [0,1]");
    return e;
  }

  static Emission beta(double a, double b) {
    if (!(a > 0.0 && b > 0.0)) fail(ErrorKind::config, "beta shape parameters must be positive");
    return Emission(Kind::beta, a, b);
  }

  Kind kind() const noexcept { return kind_; }
  double param1() const noexcept { return p1_; }
  double param2() const noexcept { return p2_; }

  double cdf(double x) const {
    if (x <= 0.0) return 0.0;
    if (x >= 1.0) return 1.0;
    switch (kind_) {
      case Kind::uniform: return x;
      case Kind::truncated_normal: {
        const double z = (x - p1_) / p2_;
        // Use whichever tail keeps precision.
        if (z <= 0.0) return (std_normal_cdf(z) - lo_cdf_) / mass_;
        return 1.0 - (std_normal_ccdf(z) - hi_ccdf_) / mass_;
      }
      case Kind::beta: return boost::math::ibeta(p1_, p2_, x);
    }
    return 0.0;
  }

  double pdf(double x) const {
    if (x < 0.0 || x > 1.0) return 0.0;
    switch (kind_) {
      case Kind::uniform: return 1.0;
      case Kind::truncated_normal: {
        const double z = (x - p1_) / p2_;
        return std::exp(-0.5 * z * z) / (std::sqrt(2.0 * M_PI) * p2_ * mass_);
      }
      case Kind::beta: return boost::math::ibeta_derivative(p1_, p2_, x);
    }
    return 0.0;
  }

  /// Inverse CDF for u in (0,1).
  double quantile(double u) const {
    double x = 0.0;
    switch (kind_) {
      case Kind::uniform: x = u; break;
      case Kind::truncated_normal: {
        // Target CDF value lo + u*mass, expressed from the nearer tail.
        const double lower_target = lo_cdf_ + u * mass_;
        if (lower_target <= 0.5) {
          x = p1_ + p2_ * std_normal_quantile(lower_target);
        } else {
          const double upper_target = hi_ccdf_ + (1.0 - u) * mass_;
          x = p1_ - p2_ * std_normal_quantile(upper_target);
        }
        break;
      }
      case Kind::beta: x = boost::math::ibeta_inv(p1_, p2_, u); break;
    }
    return std::clamp(x, 0.0, 1.0);
  }

  friend bool operator==(const Emission& a, const Emission& b) {
    return a.kind_ == b.kind_ && a.p1_ == b.p1_ && a.p2_ == b.p2_;
  }

 private:
  Emission(Kind kind, double p1, double p2) : kind_(kind), p1_(p1), p2_(p2) {}

  static double std_normal_cdf(double z) { return 0.5 * boost::math::erfc(-z / std::sqrt(2.0)); }
  static double std_normal_ccdf(double z) { return 0.5 * boost::math::erfc(z / std::sqrt(2.0)); }
  static double std_normal_quantile(double p) {
    return -std::sqrt(2.0) * boost::math::erfc_inv(2.0 * p);
  }

  Kind kind_;
  double p1_;
  double p2_;
  double lo_cdf_ = 0.0;
  double hi_ccdf_ = 0.0;
  double mass_ = 1.0;
};

struct TrueModel {
  std::string name;
  std::vector<double> theta;
  std::vector<std::array<Emission, n_coords>> emissions;  // per component
  bool repeated = false;

  std::size_t components() const noexcept { return theta.size(); }

  void validate() const {
    if (theta.empty()) fail(ErrorKind::config, "scenario needs at least one component");
    if (emissions.size() != theta.size())
      fail(ErrorKind::config, "scenario needs one emission triple per component");
    double total = 0.0;
    for (double t : theta) {
      if (!(t > 0.0)) fail(ErrorKind::config, "scenario weights must be strictly positive");
      total += t;
    }
    if (std::abs(total - 1.0) > 1e-12) fail(ErrorKind::config, "scenario weights must sum to one");
    if (repeated)
      for (const auto& triple : emissions)
        if (!(triple[0] == triple[1] && triple[1] == triple[2]))
          fail(ErrorKind::config, "repeated scenario has differing coordinate emissions");
  }
};

/// Builds a repeated-setting model: each component uses one emission for
/// all three coordinates.
inline TrueModel repeated_model(std::string name, std::vector<double> theta,
                                const std::vector<Emission>& per_component) {
  TrueModel model;
  model.name = std::move(name);
  model.theta = std::move(theta);
  for (const auto& e : per_component) model.emissions.push_back({e, e, e});
  model.repeated = true;
  model.validate();
  return model;
}

/// The three shipped presets, all with k = 2 in the repeated setting.
inline TrueModel preset(const std::string& name) {
  if (name == "sim1")
    return repeated_model("sim1", {0.3, 0.7},
                          {Emission::truncated_normal(4.0 / 5.0, 0.07),
                           Emission::truncated_normal(1.0 / 3.0, 0.1)});
  if (name == "sim2")
    return repeated_model("sim2", {0.2, 0.8},
                          {Emission::uniform(), Emission::truncated_normal(2.0 / 3.0, 0.05)});
  if (name == "sim3")
    return repeated_model("sim3", {0.3, 0.7}, {Emission::beta(1.0, 2.0), Emission::beta(5.0, 3.0)});
  fail(ErrorKind::config, "unknown scenario preset '" + name + "'");
}

inline const std::vector<std::string>& preset_names() {
  static const std::vector<std::string> names{"sim1", "sim2", "sim3"};
  return names;
}

inline Emission emission_from_json(const nlohmann::json& j) {
  try {
    const auto kind = j.at("kind").get<std::string>();
    if (kind == "uniform") return Emission::uniform();
    if (kind == "truncated_normal" || kind == "truncnorm")
      return Emission::truncated_normal(j.at("mean").get<double>(), j.at("sd").get<double>());
    if (kind == "beta") return Emission::beta(j.at("a").get<double>(), j.at("b").get<double>());
    fail(ErrorKind::config, "unknown emission kind '" + kind + "'");
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorKind::config, std::string("bad emission entry: ") + e.what());
  }
}

inline nlohmann::json emission_to_json(const Emission& e) {
  switch (e.kind()) {
    case Emission::Kind::uniform: return {{"kind", "uniform"}};
    case Emission::Kind::truncated_normal:
      return {{"kind", "truncated_normal"}, {"mean", e.param1()}, {"sd", e.param2()}};
    case Emission::Kind::beta: return {{"kind", "beta"}, {"a", e.param1()}, {"b", e.param2()}};
  }
  return {};
}

/// Scenario from JSON:
///   {"name": "...", "k": 2, "theta": [..], "repeated": true,
///    "emissions": [[e], [e]]}            (repeated: one entry per component)
///    "emissions": [[e1,e2,e3], ...]      (otherwise: three per component)
inline TrueModel scenario_from_json(const nlohmann::json& j) {
  TrueModel model;
  try {
    model.name = j.value("name", std::string("custom"));
    model.theta = j.at("theta").get<std::vector<double>>();
    model.repeated = j.value("repeated", false);
    if (j.contains("k") && j.at("k").get<std::size_t>() != model.theta.size())
      fail(ErrorKind::config, "k does not match the length of theta");
    for (const auto& comp : j.at("emissions")) {
      if (!comp.is_array()) fail(ErrorKind::config, "each component's emissions must be a list");
      if (comp.size() == 1) {
        const auto e = emission_from_json(comp[0]);
        model.emissions.push_back({e, e, e});
      } else if (comp.size() == n_coords) {
        model.emissions.push_back(
            {emission_from_json(comp[0]), emission_from_json(comp[1]), emission_from_json(comp[2])});
      } else {
        fail(ErrorKind::config, "a component lists 1 or 3 emissions");
      }
    }
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorKind::config, std::string("bad scenario file: ") + e.what());
  }
  model.validate();
  return model;
}

inline nlohmann::json scenario_to_json(const TrueModel& model) {
  nlohmann::json emissions = nlohmann::json::array();
  for (const auto& triple : model.emissions) {
    if (model.repeated) emissions.push_back(nlohmann::json::array({emission_to_json(triple[0])}));
    else
      emissions.push_back(nlohmann::json::array(
          {emission_to_json(triple[0]), emission_to_json(triple[1]), emission_to_json(triple[2])}));
  }
  return {{"name", model.name},
          {"k", model.components()},
          {"theta", model.theta},
          {"repeated", model.repeated},
          {"emissions", emissions}};
}

inline TrueModel load_scenario(const std::string& path) {
  std::ifstream in(path);
  if (!in) fail(ErrorKind::config, "cannot open scenario file " + path);
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorKind::config, "cannot parse scenario file " + path + ": " + e.what());
  }
  return scenario_from_json(j);
}

struct Observations {
  std::vector<Point> points;
  std::vector<std::uint32_t> labels;  // zero-based latent component, diagnostics only
};

/// Draws n observations: a component from theta, then each coordinate by
/// inverse CDF from its emission.
inline Observations sample(const TrueModel& model, std::size_t n, std::uint64_t seed) {
  Rng rng(seed);
  Observations out;
  out.points.resize(n);
  out.labels.resize(n);
  for (std::size_t i = 0; i < n; ++i) {
    const auto j = rng.categorical(model.theta);
    out.labels[i] = static_cast<std::uint32_t>(j);
    for (std::size_t c = 0; c < n_coords; ++c)
      out.points[i][c] = model.emissions[j][c].quantile(rng.uniform_open());
  }
  return out;
}

/// Exact bin masses: CDF differences over each bin.
inline BinMasses true_bin_masses(const TrueModel& model, const Partition& part) {
  const std::size_t k = model.components();
  const std::size_t bins = part.size();
  BinMasses omega(k, bins);
  for (std::size_t j = 0; j < k; ++j) {
    for (std::size_t c = 0; c < n_coords; ++c) {
      if (c > 0 && model.emissions[j][c] == model.emissions[j][c - 1]) {
        std::ranges::copy(omega.row(j, c - 1), omega.row(j, c).begin());
        continue;
      }
      const auto& e = model.emissions[j][c];
      double prev = 0.0;
      for (std::size_t m = 0; m < bins; ++m) {
        const double next = (m + 1 == bins) ? 1.0 : e.cdf(part.upper(m));
        omega(j, c, m) = std::max(0.0, next - prev);
        prev = next;
      }
    }
  }
  return omega;
}

/// (theta*, omega*_M) as a parameter point of the binned model.
inline MixtureParams true_params(const TrueModel& model, const Partition& part) {
  MixtureParams params;
  params.theta = model.theta;
  params.omega = true_bin_masses(model, part);
  params.partition = part;
  params.repeated = model.repeated;
  return params;
}

}  // namespace histmix
