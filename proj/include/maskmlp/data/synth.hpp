#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include <json.hpp>

#include "maskmlp/core/error.hpp"
#include "maskmlp/core/mlp.hpp"
#include "maskmlp/core/rng.hpp"
#include "maskmlp/data/dataset.hpp"
#include "maskmlp/data/schema.hpp"

namespace maskmlp {

enum class MissingMechanism { mcar, mar };

struct SynthConfig {
  std::size_t n_students = 5000;
  std::size_t n_schools = 40;
  std::size_t teachers_per_school = 4;
  std::size_t latent_dim = 2;
  double missing_rate = 0.3048;
  MissingMechanism mechanism = MissingMechanism::mar;
  // Scales both the mean growth shift of treated students and how much the
  // intervention reduces their growth noise.
  double intervention_effect = 1.0;
  std::uint64_t seed = 0;

  void validate() const {
    if (n_schools < 2) throw ConfigError("synthetic data needs at least 2 schools");
    if (n_students < n_schools) throw ConfigError("synthetic data needs at least one student per school");
    if (teachers_per_school == 0) throw ConfigError("teachers_per_school must be positive");
    if (latent_dim == 0) throw ConfigError("latent_dim must be positive");
    if (!(missing_rate >= 0.0 && missing_rate < 1.0)) {
      throw ConfigError("missing_rate must lie in [0, 1), got " + std::to_string(missing_rate));
    }
    if (!std::isfinite(intervention_effect) || intervention_effect < 0.0) {
      throw ConfigError("intervention_effect must be a non-negative number");
    }
  }
};

inline const char* to_string(MissingMechanism m) { return m == MissingMechanism::mcar ? "mcar" : "mar"; }

inline MissingMechanism mechanism_from_string(const std::string& s) {
  if (s == "mcar" || s == "MCAR") return MissingMechanism::mcar;
  if (s == "mar" || s == "MAR") return MissingMechanism::mar;
  throw ConfigError("unknown missingness mechanism '" + s + "'");
}

namespace synth_detail {

// Intercept a such that mean(sigmoid(a + z_i)) == rate.
inline double calibrate_intercept(const std::vector<double>& z, double rate) {
  double lo = -40.0, hi = 40.0;
  for (int it = 0; it < 200; ++it) {
    const double mid = 0.5 * (lo + hi);
    double mean = 0.0;
    for (double v : z) mean += sigmoid(mid + v);
    mean /= static_cast<double>(z.size());
    (mean < rate ? lo : hi) = mid;
  }
  return 0.5 * (lo + hi);
}

inline double nonneg(double v) { return v < 0.0 ? 0.0 : v; }

}  // namespace synth_detail

/// Generates an ECRI-shaped dataset from a school-level random-effects model.
///
/// Each student has latent reading abilities; the eight assessments are
/// noisy linear read-outs of them. Post scores add growth that depends on
/// ability (peaking mid-range), teacher quality and the intervention, whose
/// treated students also grow less noisily. The word-identification
/// pre-score carries measurement error that only that feature reveals, so it
/// is the planted signal feature for its task; grp_rate is pure noise.
inline Dataset generate_synthetic(const SynthConfig& cfg) {
  cfg.validate();
  Rng rng(derive_seed(cfg.seed, "data"));
  const std::size_t n = cfg.n_students;
  const std::size_t ns = cfg.n_schools;

  // Schools: random effect, FRL rate, relative size.
  std::vector<double> school_effect(ns), frl_rate(ns), weight(ns);
  for (std::size_t s = 0; s < ns; ++s) {
    school_effect[s] = rng.normal(0.0, 0.4);
    frl_rate[s] = rng.uniform(0.2, 0.8);
    weight[s] = rng.uniform(0.6, 1.4);
  }
  std::vector<std::size_t> school_size(ns, 1);
  {
    double wsum = 0.0;
    for (double w : weight) wsum += w;
    std::size_t assigned = ns;
    for (std::size_t s = 0; s < ns; ++s) {
      const auto extra = static_cast<std::size_t>(std::floor(weight[s] / wsum * static_cast<double>(n - ns)));
      school_size[s] += extra;
      assigned += extra;
    }
    for (std::size_t s = 0; assigned < n; s = (s + 1) % ns, ++assigned) ++school_size[s];
  }

  // Teachers: knowledge, classroom management, fidelity, group-practice rate.
  const std::size_t nt = ns * cfg.teachers_per_school;
  std::vector<int> teacher_tx(nt);
  std::vector<double> tk(nt), rcmis(nt), fid(nt), grp(nt), quality(nt);
  for (std::size_t t = 0; t < nt; ++t) {
    teacher_tx[t] = rng.bernoulli(0.4731) ? 1 : 0;
    tk[t] = rng.normal();
    const double mgmt = 0.5 * tk[t] + std::sqrt(0.75) * rng.normal();
    rcmis[t] = synth_detail::nonneg(30.0 + 5.0 * mgmt);
    fid[t] = std::clamp(teacher_tx[t] ? rng.normal(0.75, 0.12) : rng.normal(0.35, 0.12), 0.0, 1.0);
    grp[t] = rng.uniform(0.0, 10.0);
    quality[t] = 0.5 * tk[t] + 0.3 * mgmt;
  }

  const auto schema = ecri_schema();
  Dataset d;
  d.schema = schema;
  d.features = FeatureMatrix(n, schema.feature_count());
  auto col = [&](const char* name) { return *schema.feature_index(name); };
  const std::size_t c_gender = col("Gender"), c_tx = col("Tx"), c_age = col("Age1b"), c_tier2 = col("Tier2_N"),
                    c_grp = col("grp_rate"), c_rcmis = col("rcmistot"), c_fid = col("gnrl_fid"),
                    c_tk = col("TKPctCrt"), c_nwfcls = col("NWFcls"), c_nwfwrc = col("NWFwrc"),
                    c_orf = col("ORFwc"), c_sawr = col("SAwrS"), c_sasr = col("SAsrS"), c_sato = col("SAtoS"),
                    c_wid = col("RMwidRS"), c_wda = col("RMwdaRS");

  auto& wid_pre = d.label_sources["RMwidRS"];
  auto& wid_post = d.label_sources["RMwidRS_post"];
  auto& wda_pre = d.label_sources["RMwdaRS"];
  auto& wda_post = d.label_sources["RMwdaRS_post"];
  for (auto* src : {&wid_pre, &wid_post, &wda_pre, &wda_post}) {
    src->values.assign(n, 0.0);
    src->observed.assign(n, 1);
  }

  std::vector<double> ability(n);
  std::vector<std::size_t> teacher_of(n);
  std::vector<int> at_risk(n);
  std::size_t row = 0;
  for (std::size_t s = 0; s < ns; ++s) {
    for (std::size_t k = 0; k < school_size[s]; ++k, ++row) {
      const std::size_t t = s * cfg.teachers_per_school + rng.below(cfg.teachers_per_school);
      teacher_of[row] = t;
      const int frl = rng.bernoulli(frl_rate[s]) ? 1 : 0;
      const int gender = rng.bernoulli(0.5132) ? 1 : 0;
      const double a1 = school_effect[s] + rng.normal() - 0.3 * frl;
      double a2 = a1;
      for (std::size_t f = 1; f < cfg.latent_dim; ++f) {
        const double z = 0.7 * a1 + std::sqrt(1.0 - 0.49) * rng.normal();
        if (f == 1) a2 = z;
      }
      ability[row] = a1;
      at_risk[row] = a1 < -0.85 ? 1 : 0;

      auto& x = d.features.values;
      x(row, c_gender) = gender;
      x(row, c_tx) = teacher_tx[t];
      x(row, c_age) = rng.normal(6.5, 0.3);
      x(row, c_grp) = grp[t];
      x(row, c_rcmis) = rcmis[t];
      x(row, c_fid) = fid[t];
      x(row, c_tk) = std::clamp(60.0 + 12.0 * tk[t], 0.0, 100.0);
      const double decode = 0.8 * a2 + 0.2 * a1;
      x(row, c_nwfcls) = synth_detail::nonneg(45.0 + 18.0 * decode + 8.0 * rng.normal());
      x(row, c_nwfwrc) = synth_detail::nonneg(8.0 + 5.0 * decode + 3.0 * rng.normal());
      x(row, c_orf) = synth_detail::nonneg(20.0 + 12.0 * a1 + 6.0 * rng.normal());
      x(row, c_sawr) = synth_detail::nonneg(25.0 + 6.0 * a1 + 3.0 * rng.normal());
      x(row, c_sasr) = synth_detail::nonneg(15.0 + 5.0 * a1 + 3.0 * rng.normal());
      x(row, c_sato) = x(row, c_sawr) + x(row, c_sasr) + synth_detail::nonneg(10.0 + 4.0 * a2 + 3.0 * rng.normal());

      const int tx = teacher_tx[t];
      const double effect = cfg.intervention_effect;
      const double noise_scale = tx ? 1.0 / (1.0 + effect) : 1.0;
      const double tx_shift = tx * (1.5 * effect + 4.0 * effect * (fid[t] - 0.5));

      const double wid_true = 30.0 + 10.0 * a1;
      const double wid_measured = synth_detail::nonneg(wid_true + 6.0 * rng.normal());
      const double wid_growth = 18.0 + 3.0 * quality[t] + 2.0 * a1 - 2.5 * a1 * a1 + tx_shift;
      x(row, c_wid) = wid_measured;
      wid_pre.values[row] = wid_measured;
      wid_post.values[row] = synth_detail::nonneg(wid_true + wid_growth + 6.0 * noise_scale * rng.normal());

      const double wda_true = 12.0 + 6.0 * a2;
      const double wda_measured = synth_detail::nonneg(wda_true + 4.0 * rng.normal());
      const double wda_growth = 8.0 + 2.0 * quality[t] + 1.5 * a2 - 1.5 * a2 * a2 + tx_shift;
      x(row, c_wda) = wda_measured;
      wda_pre.values[row] = wda_measured;
      wda_post.values[row] = synth_detail::nonneg(wda_true + wda_growth + 4.0 * noise_scale * rng.normal());

      d.student_ids.push_back(std::to_string(row + 1));
      d.school_ids.push_back(std::to_string(s + 1));
      d.teacher_ids.push_back(std::to_string(t + 1));
      d.intervention.push_back(tx);
      d.subgroups["Gender"].push_back(std::to_string(gender));
      d.subgroups["at_risk"].push_back(std::to_string(at_risk[row]));
      d.subgroups["frl"].push_back(std::to_string(frl));
    }
  }

  // Classroom at-risk counts.
  std::vector<double> tier2(nt, 0.0);
  for (std::size_t r = 0; r < n; ++r) tier2[teacher_of[r]] += at_risk[r];
  for (std::size_t r = 0; r < n; ++r) d.features.values(r, c_tier2) = tier2[teacher_of[r]];

  // Missingness over the eight assessments and the two post scores.
  if (cfg.missing_rate > 0.0) {
    std::vector<double> z(n, 0.0);
    if (cfg.mechanism == MissingMechanism::mar) {
      for (std::size_t r = 0; r < n; ++r) z[r] = -1.0 * ability[r];
    }
    const double intercept = synth_detail::calibrate_intercept(z, cfg.missing_rate);
    // A student absent on a testing day misses the whole battery.
    const std::vector<std::vector<std::size_t>> batteries = {
        {c_nwfcls, c_nwfwrc, c_orf}, {c_sawr, c_sasr, c_sato}, {c_wid, c_wda}};
    for (std::size_t r = 0; r < n; ++r) {
      const double p = sigmoid(intercept + z[r]);
      for (const auto& battery : batteries) {
        if (!rng.bernoulli(p)) continue;
        for (auto c : battery) d.features.set_missing(r, c);
      }
      if (rng.bernoulli(p)) {
        for (auto* src : {&wid_post, &wda_post}) {
          src->observed[r] = 0;
          src->values[r] = 0.0;
        }
      }
    }
    for (std::size_t r = 0; r < n; ++r) {
      if (!d.features.is_observed(r, c_wid)) wid_pre.observed[r] = 0, wid_pre.values[r] = 0.0;
      if (!d.features.is_observed(r, c_wda)) wda_pre.observed[r] = 0, wda_pre.values[r] = 0.0;
    }
  }
  d.validate();
  return d;
}

/// Ground truth recorded next to generated data.
inline nlohmann::json synth_manifest(const SynthConfig& cfg, const Dataset& d) {
  nlohmann::json j;
  j["config"] = {{"n_students", cfg.n_students},
                 {"n_schools", cfg.n_schools},
                 {"teachers_per_school", cfg.teachers_per_school},
                 {"latent_dim", cfg.latent_dim},
                 {"missing_rate", cfg.missing_rate},
                 {"mechanism", to_string(cfg.mechanism)},
                 {"intervention_effect", cfg.intervention_effect},
                 {"seed", cfg.seed}};
  j["rows"] = d.rows();
  j["realized_missing_rate"] = compute_missing_rate(d);
  j["planted_signal"] = {{"word_identification", "RMwidRS"}, {"word_attack", "RMwdaRS"}};
  j["noise_features"] = {"grp_rate"};
  return j;
}

}  // namespace maskmlp
