/* Copyright 2026 The espsim Authors.

Licensed under the Apache License, Version 2.0 (the "License");
you may not use this file except in compliance with the License.
You may obtain a copy of the License at

    http://www.apache.org/licenses/LICENSE-2.0

Unless required by applicable law or agreed to in writing, software
distributed under the License is distributed on an "AS IS" BASIS,
WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
See the License for the specific language governing permissions and
limitations under the License.
==============================================================================*/

#include "espsim/cost_model.hpp"

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <fstream>

#include "json.hpp"

namespace espsim {

namespace {

using json = nlohmann::json;

constexpr double kRankTolerance = 1e-9;

// Solves min ||A x - y|| over the columns listed in active; inactive
// coefficients stay fixed at zero. Throws when the active design is
// rank deficient.
Eigen::Vector3d solve_active(const Eigen::MatrixXd& design,
                             const Eigen::VectorXd& y,
                             const std::vector<int>& active) {
  Eigen::MatrixXd sub(design.rows(), static_cast<Eigen::Index>(active.size()));
  for (size_t c = 0; c < active.size(); ++c) sub.col(c) = design.col(active[c]);
  Eigen::ColPivHouseholderQR<Eigen::MatrixXd> qr(sub);
  qr.setThreshold(kRankTolerance);
  if (qr.rank() < sub.cols()) {
    throw UnderdeterminedError("profile design matrix is rank deficient");
  }
  Eigen::VectorXd sol = qr.solve(y);
  Eigen::Vector3d full = Eigen::Vector3d::Zero();
  for (size_t c = 0; c < active.size(); ++c) full[active[c]] = sol[c];
  return full;
}

json key_to_json(const StrategyKey& key) {
  return json{{"dop", key.dop}, {"tp", key.tp}};
}

StrategyKey key_from_json(const json& j) {
  return StrategyKey{j.at("dop").get<int>(), j.at("tp").get<int>()};
}

}  // namespace

void BandwidthModel::set_pair(InstanceId a, InstanceId b, double tokens_per_ms) {
  if (tokens_per_ms <= 0) throw ConfigError("bandwidth must be positive");
  overrides_[std::minmax(a, b)] = tokens_per_ms;
}

double BandwidthModel::between(InstanceId a, InstanceId b) const {
  auto it = overrides_.find(std::minmax(a, b));
  return it == overrides_.end() ? default_tokens_per_ms_ : it->second;
}

double BandwidthModel::average(InstanceId source,
                               const std::vector<InstanceId>& targets) const {
  if (targets.empty()) return default_tokens_per_ms_;
  double sum = 0;
  for (InstanceId t : targets) sum += between(source, t);
  return sum / static_cast<double>(targets.size());
}

Millis migration_time(TokenCount volume, double avg_bandwidth_tokens_per_ms) {
  if (volume < 0) throw InternalError("negative migration volume");
  if (avg_bandwidth_tokens_per_ms <= 0) throw ConfigError("bandwidth must be positive");
  return static_cast<double>(volume) / avg_bandwidth_tokens_per_ms;
}

CostCoefficients fit_prefill_coefficients(std::span<const ProfileSample> samples) {
  if (samples.size() < 3) {
    throw UnderdeterminedError("need at least three profile samples");
  }
  Eigen::MatrixXd design(static_cast<Eigen::Index>(samples.size()), 3);
  Eigen::VectorXd y(static_cast<Eigen::Index>(samples.size()));
  for (size_t i = 0; i < samples.size(); ++i) {
    double sum = 0, sum_sq = 0;
    for (TokenCount len : samples[i].lengths) {
      sum += static_cast<double>(len);
      sum_sq += static_cast<double>(len) * static_cast<double>(len);
    }
    design(static_cast<Eigen::Index>(i), 0) = 1.0;
    design(static_cast<Eigen::Index>(i), 1) = sum;
    design(static_cast<Eigen::Index>(i), 2) = sum_sq;
    y(static_cast<Eigen::Index>(i)) = samples[i].measured_ms;
  }
  // Lengths spanning orders of magnitude make the raw normal equations
  // ill-conditioned; scale columns to unit norm before factoring.
  Eigen::Vector3d scale;
  for (int c = 0; c < 3; ++c) {
    double n = design.col(c).norm();
    scale[c] = n > 0 ? n : 1.0;
    design.col(c) /= scale[c];
  }

  std::vector<int> active = {0, 1, 2};
  Eigen::Vector3d coefs = solve_active(design, y, active);
  // Drop the most negative coefficient and refit until all are admissible.
  while (true) {
    int worst = -1;
    double worst_value = -1e-12;
    for (int c : active) {
      if (coefs[c] < worst_value) {
        worst_value = coefs[c];
        worst = c;
      }
    }
    if (worst < 0) break;
    active.erase(std::find(active.begin(), active.end(), worst));
    if (active.empty()) {
      // All-zero model: profiles were nonpositive noise. Keep zeros.
      coefs.setZero();
      break;
    }
    coefs = solve_active(design, y, active);
  }
  for (int c = 0; c < 3; ++c) coefs[c] = std::max(coefs[c], 0.0) / scale[c];
  return CostCoefficients{coefs[0], coefs[1], coefs[2]};
}

void Sib::put(const StrategyRecord& record) {
  if (record.key.dop <= 0 || record.key.tp <= 0) {
    throw ConfigError("strategy dop and tp must be positive");
  }
  records_[record.key] = record;
}

bool Sib::has(const StrategyKey& key) const { return records_.count(key) > 0; }

const StrategyRecord& Sib::record(const StrategyKey& key) const {
  auto it = records_.find(key);
  if (it == records_.end()) throw UnknownStrategyError(key);
  return it->second;
}

std::vector<StrategyKey> Sib::keys() const {
  std::vector<StrategyKey> out;
  out.reserve(records_.size());
  for (const auto& [key, rec] : records_) out.push_back(key);
  return out;
}

double Sib::prefill_time(std::span<const TokenCount> input_lens,
                         const StrategyKey& key) const {
  double sum = 0, sum_sq = 0;
  for (TokenCount len : input_lens) {
    sum += static_cast<double>(len);
    sum_sq += static_cast<double>(len) * static_cast<double>(len);
  }
  return prefill_time_sums(sum, sum_sq, key);
}

double Sib::prefill_time_sums(double sum_len, double sum_len_sq,
                              const StrategyKey& key) const {
  const CostCoefficients& c = record(key).prefill;
  return c.alpha + c.beta * sum_len + c.gamma * sum_len_sq;
}

double Sib::decode_time(int batch_size, TokenCount resident_kv,
                        const StrategyKey& key, int n_masters) const {
  if (batch_size < 0 || resident_kv < 0 || n_masters < 1) {
    throw InternalError("bad decode_time arguments");
  }
  const DecodeCoefficients& c = record(key).decode;
  double beta_term = c.beta * batch_size;
  if (batch_size > c.compute_bound_batch_threshold) {
    beta_term /= static_cast<double>(n_masters);
  }
  return c.alpha + beta_term +
         c.gamma * static_cast<double>(resident_kv) / static_cast<double>(key.dop);
}

double Sib::tipping_point_ms(const StrategyKey& key) const {
  return record(key).tipping_ms;
}

void Sib::add_profile(const StrategyKey& key, ProfileSample sample) {
  profiles_[key].push_back(std::move(sample));
}

const std::vector<ProfileSample>* Sib::profiles(const StrategyKey& key) const {
  auto it = profiles_.find(key);
  return it == profiles_.end() ? nullptr : &it->second;
}

void Sib::fit_all() {
  for (const auto& [key, samples] : profiles_) {
    CostCoefficients fitted = fit_prefill_coefficients(samples);
    auto it = records_.find(key);
    if (it == records_.end()) {
      StrategyRecord rec;
      rec.key = key;
      rec.prefill = fitted;
      records_[key] = rec;
    } else {
      it->second.prefill = fitted;
    }
  }
}

Sib Sib::load(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open SIB file: " + path);
  Sib sib;
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    json j;
    try {
      j = json::parse(line);
    } catch (const json::exception& e) {
      throw ConfigError("SIB line " + std::to_string(lineno) + ": " + e.what());
    }
    const std::string kind = j.value("kind", "");
    if (kind == "coefficients") {
      StrategyRecord rec;
      rec.key = key_from_json(j);
      rec.prefill = {j.at("alpha_p").get<double>(), j.at("beta_p").get<double>(),
                     j.at("gamma_p").get<double>()};
      rec.decode = {j.at("alpha_d").get<double>(), j.at("beta_d").get<double>(),
                    j.at("gamma_d").get<double>(),
                    j.value("compute_bound_batch_threshold", 64)};
      rec.tipping_ms = j.value("tipping_ms", 0.0);
      sib.put(rec);
    } else if (kind == "profile") {
      ProfileSample sample;
      sample.lengths = j.at("lengths").get<std::vector<TokenCount>>();
      sample.measured_ms = j.at("measured_ms").get<double>();
      sib.add_profile(key_from_json(j), std::move(sample));
    } else {
      throw ConfigError("SIB line " + std::to_string(lineno) +
                        ": unknown record kind '" + kind + "'");
    }
  }
  return sib;
}

void Sib::save(const std::string& path) const {
  std::ofstream out(path);
  if (!out) throw ConfigError("cannot write SIB file: " + path);
  for (const auto& [key, rec] : records_) {
    json j = key_to_json(key);
    j["kind"] = "coefficients";
    j["alpha_p"] = rec.prefill.alpha;
    j["beta_p"] = rec.prefill.beta;
    j["gamma_p"] = rec.prefill.gamma;
    j["alpha_d"] = rec.decode.alpha;
    j["beta_d"] = rec.decode.beta;
    j["gamma_d"] = rec.decode.gamma;
    j["compute_bound_batch_threshold"] = rec.decode.compute_bound_batch_threshold;
    j["tipping_ms"] = rec.tipping_ms;
    out << j.dump() << '\n';
  }
  for (const auto& [key, samples] : profiles_) {
    for (const ProfileSample& s : samples) {
      json j = key_to_json(key);
      j["kind"] = "profile";
      j["lengths"] = s.lengths;
      j["measured_ms"] = s.measured_ms;
      out << j.dump() << '\n';
    }
  }
}

}  // namespace espsim
