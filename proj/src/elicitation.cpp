#include "vfm/elicitation.hpp"

#include <algorithm>
#include <cmath>
#include <iostream>
#include <map>
#include <numeric>
#include <set>
#include <stdexcept>

#include "vfm/elbo.hpp"
#include "vfm/metrics.hpp"

namespace vfm {

Strategy parse_strategy(std::string_view name) {
  if (name == "random") return Strategy::Random;
  if (name == "mean") return Strategy::MeanClosestHalf;
  if (name == "variance") return Strategy::MaxVariance;
  throw std::invalid_argument("unknown strategy '" + std::string(name) +
                              "' (expected random, mean or variance)");
}

std::string_view to_string(Strategy strategy) {
  switch (strategy) {
    case Strategy::Random:
      return "random";
    case Strategy::MeanClosestHalf:
      return "mean";
    case Strategy::MaxVariance:
      return "variance";
  }
  return "unknown";
}

void ElicitationProtocol::validate(std::size_t num_items) const {
  auto in_unit = [](double f) { return f > 0.0 && f <= 1.0; };
  if (!in_unit(observed_user_fraction) || !in_unit(interactive_fraction) ||
      !in_unit(validation_fraction)) {
    throw std::invalid_argument("elicitation fractions must lie in (0, 1]");
  }
  if (std::abs(interactive_fraction + validation_fraction - 1.0) > 1e-9) {
    throw std::invalid_argument("interactive and validation fractions must sum to 1");
  }
  if (query_batch_size == 0 || rounds == 0 || samples < 2) {
    throw std::invalid_argument("need a positive batch, rounds, and at least two samples");
  }
  const auto pool = static_cast<std::size_t>(
      std::floor(interactive_fraction * static_cast<double>(num_items) + 1e-9));
  if (query_batch_size * rounds > pool) {
    throw std::invalid_argument("query budget " + std::to_string(query_batch_size * rounds) +
                                " exceeds the interactive pool of " + std::to_string(pool));
  }
}

// Session ----------------------------------------------------------------------

ElicitationSession::ElicitationSession(std::shared_ptr<const FrozenModel> model,
                                       std::uint32_t user_feature,
                                       std::vector<std::uint32_t> interactive_pool,
                                       Strategy strategy, std::size_t samples,
                                       UserUpdateConfig update, std::uint64_t seed)
    : model_(std::move(model)),
      user_feature_(user_feature),
      pool_(std::move(interactive_pool)),
      strategy_(strategy),
      samples_(samples),
      update_(update),
      rng_(seed) {
  if (!model_) throw std::invalid_argument("session needs a model");
  if (samples_ < 2) throw std::invalid_argument("session needs at least two samples");
  const auto& vp = model_->params;
  if (user_feature_ >= vp.num_features()) throw std::out_of_range("user feature out of range");
  for (auto item : pool_) {
    if (item >= vp.num_features()) throw std::out_of_range("pool item out of range");
  }
  user_group_ = model_->space.group_of(user_feature_);
  const std::size_t d = vp.dim();
  user_.assign(vp.block_size(), 0.0);
  user_[0] = vp.nu_w(user_group_);
  user_[1] = softplus_inverse(1.0 / std::sqrt(softplus(vp.lambda_w_raw(user_group_))));
  auto nu = vp.nu_v(user_group_);
  auto lam = vp.lambda_v_raw(user_group_);
  for (std::size_t f = 0; f < d; ++f) {
    user_[2 + f] = nu[f];
    user_[2 + d + f] = softplus_inverse(1.0 / std::sqrt(softplus(lam[f])));
  }
  trajectory_.push_back(user_);
}

bool ElicitationSession::is_queried(std::uint32_t item) const {
  return std::find(queried_.begin(), queried_.end(), item) != queried_.end();
}

PredictiveStats ElicitationSession::predictive_stats(std::uint32_t item) {
  const auto& vp = model_->params;
  const std::size_t d = vp.dim();
  std::normal_distribution<double> normal;
  const double mu_w0 = vp.global(VariationalParams::kMuW0);
  const double sigma_w0 = vp.sigma_w0();
  const auto item_mu_v = vp.mu_v(item);
  const auto item_rho_v = vp.rho_v(item);
  const double item_sigma_w = softplus(vp.rho_w(item));

  double prob_sum = 0.0;
  double mean = 0.0;
  double m2 = 0.0;
  for (std::size_t s = 0; s < samples_; ++s) {
    double y = mu_w0 + normal(rng_) * sigma_w0;
    y += user_[0] + normal(rng_) * softplus(user_[1]);
    y += vp.mu_w(item) + normal(rng_) * item_sigma_w;
    for (std::size_t f = 0; f < d; ++f) {
      const double vu = user_[2 + f] + normal(rng_) * softplus(user_[2 + d + f]);
      const double vi = item_mu_v[f] + normal(rng_) * softplus(item_rho_v[f]);
      y += vu * vi;
    }
    prob_sum += sigmoid(y);
    const double delta = y - mean;  // Welford
    mean += delta / static_cast<double>(s + 1);
    m2 += delta * (y - mean);
  }
  return {prob_sum / static_cast<double>(samples_),
          m2 / static_cast<double>(samples_ - 1)};
}

std::vector<std::uint32_t> ElicitationSession::select_queries(std::size_t count) {
  std::vector<std::uint32_t> candidates;
  for (auto item : pool_) {
    if (!is_queried(item)) candidates.push_back(item);
  }
  if (candidates.size() < count) {
    throw std::runtime_error("interactive pool exhausted: " + std::to_string(candidates.size()) +
                             " items left, " + std::to_string(count) + " requested");
  }
  std::sort(candidates.begin(), candidates.end());
  std::vector<std::uint32_t> chosen;
  if (strategy_ == Strategy::Random) {
    std::shuffle(candidates.begin(), candidates.end(), rng_);
    chosen.assign(candidates.begin(), candidates.begin() + static_cast<std::ptrdiff_t>(count));
  } else {
    std::vector<std::pair<double, std::uint32_t>> keyed;
    for (auto item : candidates) {
      const auto stats = predictive_stats(item);
      const double key = strategy_ == Strategy::MaxVariance ? -stats.variance
                                                            : std::abs(stats.mean_prob - 0.5);
      keyed.emplace_back(key, item);
    }
    std::sort(keyed.begin(), keyed.end());
    for (std::size_t i = 0; i < count; ++i) chosen.push_back(keyed[i].second);
  }
  for (auto item : chosen) {
    queried_.push_back(item);
    pending_.push_back(item);
  }
  return chosen;
}

std::vector<double> ElicitationSession::make_update_noise(Rng& rng) const {
  const std::size_t stride = model_->params.dim() + 1;
  std::vector<double> noise(samples_ * (1 + stride * (1 + revealed_.size())));
  std::normal_distribution<double> normal;
  for (auto& e : noise) e = normal(rng);
  return noise;
}

double ElicitationSession::restricted_elbo(std::span<const double> user_block,
                                           std::span<const double> noise,
                                           std::vector<double>* grad) const {
  const auto& vp = model_->params;
  const std::size_t d = vp.dim();
  const std::size_t stride = d + 1;
  const std::size_t R = revealed_.size();
  const std::size_t per_sample = 1 + stride * (1 + R);
  if (user_block.size() != vp.block_size() || noise.size() != samples_ * per_sample) {
    throw std::invalid_argument("user block or noise has the wrong size");
  }
  if (grad) grad->assign(user_block.size(), 0.0);

  const double mu_w0 = vp.global(VariationalParams::kMuW0);
  const double sigma_w0 = vp.sigma_w0();
  const double inv_s = 1.0 / static_cast<double>(samples_);
  std::vector<double> sigma_u(stride);
  std::vector<double> dsigma_u(stride);
  sigma_u[0] = softplus(user_block[1]);
  dsigma_u[0] = sigmoid(user_block[1]);
  for (std::size_t f = 0; f < d; ++f) {
    sigma_u[1 + f] = softplus(user_block[2 + d + f]);
    dsigma_u[1 + f] = sigmoid(user_block[2 + d + f]);
  }
  std::vector<double> vu(d);
  std::vector<double> vi(d);
  std::vector<double> dtheta(stride);

  double loglik = 0.0;
  for (std::size_t s = 0; s < samples_; ++s) {
    const double* eps = noise.data() + s * per_sample;
    const double w0 = mu_w0 + eps[0] * sigma_w0;
    const double* eu = eps + 1;
    const double wu = user_block[0] + eu[0] * sigma_u[0];
    for (std::size_t f = 0; f < d; ++f) vu[f] = user_block[2 + f] + eu[1 + f] * sigma_u[1 + f];
    std::fill(dtheta.begin(), dtheta.end(), 0.0);
    for (std::size_t r = 0; r < R; ++r) {
      const auto item = revealed_[r].item;
      const double* ei = eps + 1 + stride * (1 + r);
      double y = w0 + wu + vp.mu_w(item) + ei[0] * softplus(vp.rho_w(item));
      const auto mu_v = vp.mu_v(item);
      const auto rho_v = vp.rho_v(item);
      for (std::size_t f = 0; f < d; ++f) {
        vi[f] = mu_v[f] + ei[1 + f] * softplus(rho_v[f]);
        y += vu[f] * vi[f];
      }
      const double label = revealed_[r].label;
      loglik += log_likelihood(Task::Classification, label, y, 1.0);
      if (grad) {
        const double g = (label - sigmoid(y)) * inv_s;
        dtheta[0] += g;
        for (std::size_t f = 0; f < d; ++f) dtheta[1 + f] += g * vi[f];
      }
    }
    if (grad) {
      (*grad)[0] += dtheta[0];
      (*grad)[1] += dtheta[0] * eu[0] * dsigma_u[0];
      for (std::size_t f = 0; f < d; ++f) {
        (*grad)[2 + f] += dtheta[1 + f];
        (*grad)[2 + d + f] += dtheta[1 + f] * eu[1 + f] * dsigma_u[1 + f];
      }
    }
  }
  double value = loglik * inv_s;

  // KL of the user block against its group prior.
  auto kl_term = [&](std::size_t mu_i, std::size_t rho_i, double nu, double lambda_raw) {
    const double mu = user_block[mu_i];
    const double rho = user_block[rho_i];
    const double sigma = softplus(rho);
    const double lambda = softplus(lambda_raw);
    value -= kl_gaussian(mu, sigma, nu, lambda);
    if (grad) {
      (*grad)[mu_i] -= lambda * (mu - nu);
      (*grad)[rho_i] -= (lambda * sigma - 1.0 / sigma) * sigmoid(rho);
    }
  };
  kl_term(0, 1, vp.nu_w(user_group_), vp.lambda_w_raw(user_group_));
  const auto nu = vp.nu_v(user_group_);
  const auto lam = vp.lambda_v_raw(user_group_);
  for (std::size_t f = 0; f < d; ++f) kl_term(2 + f, 2 + d + f, nu[f], lam[f]);
  return value;
}

std::size_t ElicitationSession::optimize_user(std::span<const double> noise,
                                              const UserUpdateConfig& config) {
  SparseAdam adam(user_.size(), AdamOptions{config.learning_rate});
  const CoordRange all{0, user_.size()};
  std::vector<double> grad;
  double previous = -std::numeric_limits<double>::infinity();
  std::size_t streak = 0;
  std::size_t it = 0;
  for (; it < config.max_iterations; ++it) {
    const double value = restricted_elbo(user_, noise, &grad);
    if (!std::isfinite(value)) throw std::runtime_error("non-finite user ELBO");
    streak = value < previous ? streak + 1 : 0;
    previous = value;
    if (config.patience_elbo > 0 && streak >= config.patience_elbo) break;
    adam.step(user_, grad, std::span<const CoordRange>(&all, 1));
  }
  return it;
}

void ElicitationSession::reveal_and_update(std::span<const Answer> answers) {
  if (answers.empty()) return;
  std::vector<std::uint32_t> still_pending = pending_;
  for (const auto& a : answers) {
    if (a.label != 0.0 && a.label != 1.0) {
      throw std::invalid_argument("answer label must be 0 or 1");
    }
    auto it = std::find(still_pending.begin(), still_pending.end(), a.item);
    if (it == still_pending.end()) {
      throw std::logic_error("item " + std::to_string(a.item) + " is not pending");
    }
    still_pending.erase(it);
  }
  pending_ = std::move(still_pending);
  revealed_.insert(revealed_.end(), answers.begin(), answers.end());
  const auto noise = make_update_noise(rng_);
  optimize_user(noise, update_);
  trajectory_.push_back(user_);
}

// Preference matrices ------------------------------------------------------------

std::size_t PreferenceMatrix::row_sum(std::size_t u) const {
  std::size_t s = 0;
  for (std::size_t i = 0; i < num_items; ++i) s += at(u, i);
  return s;
}

Dataset PreferenceMatrix::to_dataset(std::span<const std::size_t> rows) const {
  std::vector<std::size_t> all;
  if (rows.empty()) {
    all.resize(num_users);
    std::iota(all.begin(), all.end(), 0);
    rows = all;
  }
  std::vector<SparseInstance> instances;
  instances.reserve(rows.size() * num_items);
  for (auto u : rows) {
    for (std::size_t i = 0; i < num_items; ++i) {
      SparseInstance inst;
      inst.entries = {{user_feature(u), 1.0}, {item_feature(i), 1.0}};
      inst.label = at(u, i);
      instances.push_back(std::move(inst));
    }
  }
  FeatureSpace space({{"user", 0, num_users}, {"item", num_users, num_users + num_items}});
  return Dataset(std::move(space), Task::Classification, std::move(instances));
}

PreferenceMatrix build_movie10k(std::span<const MovieLensRating> ratings, std::uint64_t seed,
                                std::size_t num_items, std::size_t num_users) {
  std::map<std::int64_t, std::size_t> counts;
  for (const auto& r : ratings) ++counts[r.item];
  std::vector<std::pair<std::size_t, std::int64_t>> by_count;
  for (const auto& [item, c] : counts) by_count.emplace_back(c, item);
  std::sort(by_count.begin(), by_count.end(), [](const auto& a, const auto& b) {
    return a.first != b.first ? a.first > b.first : a.second < b.second;
  });
  if (by_count.size() < num_items) {
    throw DataError("only " + std::to_string(by_count.size()) + " distinct items");
  }
  std::map<std::int64_t, std::size_t> column;
  PreferenceMatrix m;
  m.num_items = num_items;
  for (std::size_t j = 0; j < num_items; ++j) {
    column[by_count[j].second] = j;
    m.item_ids.push_back(by_count[j].second);
  }
  std::map<std::int64_t, std::set<std::size_t>> rated;
  for (const auto& r : ratings) {
    auto it = column.find(r.item);
    if (it != column.end()) rated[r.user].insert(it->second);
  }
  std::vector<std::int64_t> candidates;
  for (const auto& [user, items] : rated) {
    if (!items.empty() && items.size() < num_items) candidates.push_back(user);
  }
  if (candidates.size() < num_users) {
    throw DataError("only " + std::to_string(candidates.size()) +
                    " users rated some but not all of the top items");
  }
  Rng rng(seed);
  std::shuffle(candidates.begin(), candidates.end(), rng);
  candidates.resize(num_users);
  std::sort(candidates.begin(), candidates.end());
  m.num_users = num_users;
  m.values.assign(num_users * num_items, 0);
  for (std::size_t u = 0; u < num_users; ++u) {
    m.user_ids.push_back(candidates[u]);
    for (auto j : rated[candidates[u]]) m.values[u * num_items + j] = 1;
  }
  return m;
}

PreferenceMatrix synthetic_movie10k(std::uint64_t seed, const SyntheticPreferenceOptions& o) {
  Rng rng(seed);
  std::normal_distribution<double> normal;
  std::uniform_real_distribution<double> uniform;
  // Factor variance scale / sqrt(rank) gives the planted interaction sd `factor_scale`.
  const double factor_sd = std::sqrt(o.factor_scale / std::sqrt(static_cast<double>(o.rank)));
  std::vector<double> popularity(o.num_items);
  std::vector<double> item_factors(o.num_items * o.rank);
  for (auto& p : popularity) p = o.popularity_sd * normal(rng);
  for (auto& f : item_factors) f = factor_sd * normal(rng);

  PreferenceMatrix m;
  m.num_items = o.num_items;
  for (std::size_t i = 0; i < o.num_items; ++i) m.item_ids.push_back(static_cast<std::int64_t>(i + 1));
  std::vector<double> user_factor(o.rank);
  std::vector<std::uint8_t> row(o.num_items);
  std::int64_t next_id = 1;
  while (m.num_users < o.num_users) {
    const double activity = o.activity_mean + o.activity_sd * normal(rng);
    for (auto& f : user_factor) f = factor_sd * normal(rng);
    std::size_t sum = 0;
    for (std::size_t i = 0; i < o.num_items; ++i) {
      double logit = activity + popularity[i];
      for (std::size_t f = 0; f < o.rank; ++f) logit += user_factor[f] * item_factors[i * o.rank + f];
      row[i] = uniform(rng) < sigmoid(logit) ? 1 : 0;
      sum += row[i];
    }
    const std::int64_t id = next_id++;
    if (sum == 0 || sum == o.num_items) continue;
    m.user_ids.push_back(id);
    m.values.insert(m.values.end(), row.begin(), row.end());
    ++m.num_users;
  }
  return m;
}

// Protocol -------------------------------------------------------------------------

ElicitationSetup prepare_elicitation(const PreferenceMatrix& matrix,
                                     const ElicitationProtocol& protocol,
                                     const TrainConfig& train_config, std::uint64_t seed) {
  protocol.validate(matrix.num_items);
  ElicitationSetup setup;
  const double user_fr[2] = {protocol.observed_user_fraction, 1.0 - protocol.observed_user_fraction};
  if (protocol.observed_user_fraction >= 1.0) {
    throw std::invalid_argument("no users left to elicit");
  }
  auto users = split_indices(matrix.num_users, user_fr, derive_seed(seed, "users"));
  setup.observed_users = users[0];
  setup.held_out_users = users[1];
  std::sort(setup.held_out_users.begin(), setup.held_out_users.end());
  const double item_fr[2] = {protocol.interactive_fraction, protocol.validation_fraction};
  auto items = split_indices(matrix.num_items, item_fr, derive_seed(seed, "items"));
  setup.interactive_items = items[0];
  setup.validation_items = items[1];
  std::sort(setup.interactive_items.begin(), setup.interactive_items.end());
  std::sort(setup.validation_items.begin(), setup.validation_items.end());

  const Dataset observed = matrix.to_dataset(setup.observed_users);
  TrainConfig config = train_config;
  config.task = Task::Classification;
  config.seed = derive_seed(seed, "train");
  auto result = train(observed, nullptr, config);
  setup.model = std::make_shared<const FrozenModel>(FrozenModel{observed.space(), result.averaged});
  return setup;
}

std::vector<RoundMetrics> run_protocol(const PreferenceMatrix& matrix, const ElicitationSetup& setup,
                                       const ElicitationProtocol& protocol, Strategy strategy,
                                       const UserUpdateConfig& update, std::uint64_t seed) {
  protocol.validate(matrix.num_items);
  std::vector<RoundMetrics> rows(protocol.rounds);
  std::vector<std::size_t> auc_users(protocol.rounds, 0);
  std::vector<std::size_t> map_users(protocol.rounds, 0);
  std::vector<std::uint32_t> pool;
  for (auto i : setup.interactive_items) pool.push_back(matrix.item_feature(i));

  for (auto u : setup.held_out_users) {
    if (setup.validation_items.empty()) {
      std::cerr << "warning: user " << u << " has an empty validation pool, skipped\n";
      continue;
    }
    ElicitationSession session(setup.model, matrix.user_feature(u), pool, strategy,
                               protocol.samples, update, derive_seed(seed, u));
    for (std::size_t round = 0; round < protocol.rounds; ++round) {
      std::vector<Answer> answers;
      for (auto item : session.select_queries(protocol.query_batch_size)) {
        answers.push_back({item, static_cast<double>(matrix.at(u, item - matrix.num_users))});
      }
      session.reveal_and_update(answers);

      PredictionSet preds;
      for (auto i : setup.validation_items) {
        const auto stats = session.predictive_stats(matrix.item_feature(i));
        preds.add(matrix.at(u, i), stats.mean_prob, stats.variance);
      }
      auto& row = rows[round];
      row.acc += accuracy(preds);
      row.mean_variance += mean_predictive_variance(preds);
      ++row.users;
      const auto positives = std::count(preds.truth.begin(), preds.truth.end(), 1.0);
      if (positives > 0) {
        row.map += mean_average_precision(preds);
        ++map_users[round];
        if (static_cast<std::size_t>(positives) < preds.size()) {
          row.auc += auc(preds);
          ++auc_users[round];
        }
      }
    }
  }
  for (std::size_t r = 0; r < rows.size(); ++r) {
    auto& row = rows[r];
    row.items_revealed = (r + 1) * protocol.query_batch_size;
    const auto n = static_cast<double>(std::max<std::size_t>(row.users, 1));
    row.acc /= n;
    row.mean_variance /= n;
    row.auc = auc_users[r] ? row.auc / static_cast<double>(auc_users[r]) : std::nan("");
    row.map = map_users[r] ? row.map / static_cast<double>(map_users[r]) : std::nan("");
  }
  return rows;
}

}  // namespace vfm
