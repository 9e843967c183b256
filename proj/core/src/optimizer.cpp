#include "evolver/optimizer.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <set>

#include "evolver/tokenize.hpp"

namespace evolver {

namespace {

constexpr double kNeutralizeSigma = 1e-12;  // below this, standardization neutralizes
constexpr double kRatioExpCap = 30.0;       // overflow guard on the log-ratio

std::vector<double> softmax(const std::vector<double>& logits, double temperature) {
    std::vector<double> p(logits.size());
    if (logits.empty()) return p;
    if (temperature <= 0.0) {
        // degenerate greedy distribution: all mass on the argmax
        size_t best = 0;
        for (size_t i = 1; i < logits.size(); ++i)
            if (logits[i] > logits[best]) best = i;
        p[best] = 1.0;
        return p;
    }
    double mx = *std::max_element(logits.begin(), logits.end());
    double sum = 0.0;
    for (size_t i = 0; i < logits.size(); ++i) {
        p[i] = std::exp((logits[i] - mx) / temperature);
        sum += p[i];
    }
    for (double& x : p) x /= sum;
    return p;
}

const std::vector<double>& logits_or_zero(const PolicySnapshot& p, const std::string& key,
                                          std::vector<double>& scratch) {
    auto it = p.logits.find(key);
    if (it != p.logits.end()) return it->second;
    scratch.assign(p.action_vocabulary.size(), 0.0);
    return scratch;
}

struct SampleEval {
    double term_sum = 0.0;    // sum of surrogate terms (1 for trajectory mode)
    int term_count = 0;       // number of terms contributing to the mean
    double ratio_sum = 0.0;   // for the mean-ratio metric
    int ratio_count = 0;
    int clipped = 0;
    int clip_total = 0;
    // per-decision gradient coefficient: d(term)/d(log pi) for that decision
    std::vector<double> decision_coef;
};

}  // namespace

std::vector<double> policy_probs(const PolicySnapshot& p, const std::string& state_key) {
    std::vector<double> scratch;
    return softmax(logits_or_zero(p, state_key, scratch), p.temperature);
}

double policy_log_prob(const PolicySnapshot& p, const std::string& state_key, int action_id) {
    std::vector<double> scratch;
    const std::vector<double>& logits = logits_or_zero(p, state_key, scratch);
    if (action_id < 0 || action_id >= static_cast<int>(logits.size()))
        throw std::out_of_range("action_id outside vocabulary");
    if (p.temperature <= 0.0) {
        std::vector<double> probs = softmax(logits, p.temperature);
        return probs[action_id] > 0.0 ? 0.0 : -std::numeric_limits<double>::infinity();
    }
    double mx = *std::max_element(logits.begin(), logits.end());
    double lse = 0.0;
    for (double v : logits) lse += std::exp((v - mx) / p.temperature);
    return (logits[action_id] - mx) / p.temperature - std::log(lse);
}

int policy_sample(const PolicySnapshot& p, const std::string& state_key, uint64_t rng_state,
                  const std::map<int, double>* bias) {
    std::vector<double> scratch;
    std::vector<double> logits = logits_or_zero(p, state_key, scratch);
    if (bias) {
        for (const auto& [action, delta] : *bias) {
            if (action >= 0 && action < static_cast<int>(logits.size()))
                logits[action] += delta;
        }
    }
    if (p.temperature <= 0.0) {
        size_t best = 0;
        for (size_t i = 1; i < logits.size(); ++i)
            if (logits[i] > logits[best]) best = i;
        return static_cast<int>(best);
    }
    std::vector<double> probs = softmax(logits, p.temperature);
    // uniform draw in [0,1) from the supplied deterministic stream
    double u = static_cast<double>(splitmix64(rng_state) >> 11) * 0x1.0p-53;
    double acc = 0.0;
    for (size_t i = 0; i < probs.size(); ++i) {
        acc += probs[i];
        if (u < acc) return static_cast<int>(i);
    }
    return static_cast<int>(probs.size()) - 1;
}

std::vector<double> group_advantage(const std::vector<double>& rewards, double eps_norm) {
    const size_t n = rewards.size();
    std::vector<double> out(n, 0.0);
    if (n == 0) return out;
    double mu = std::accumulate(rewards.begin(), rewards.end(), 0.0) / static_cast<double>(n);
    double var = 0.0;
    for (double r : rewards) var += (r - mu) * (r - mu);
    var /= static_cast<double>(n);
    double sigma = std::sqrt(var);
    if (sigma < kNeutralizeSigma) return out;  // degenerate group neutralized
    for (size_t i = 0; i < n; ++i) out[i] = (rewards[i] - mu) / (sigma + eps_norm);
    return out;
}

double select_clip_upper(double advantage, Guidance guidance, const ClipConfig& cfg) {
    if (guidance == Guidance::experience && advantage > 0.0) return cfg.eps_high_boost;
    return cfg.eps_high;
}

double surrogate_term(double ratio, double advantage, double eps_low, double eps_upper) {
    double clipped = std::clamp(ratio, 1.0 - eps_low, 1.0 + eps_upper);
    return std::min(ratio * advantage, clipped * advantage);
}

double kl_divergence(const PolicySnapshot& pi, const PolicySnapshot& pi_old,
                     const std::vector<std::string>& states) {
    if (pi.action_vocabulary != pi_old.action_vocabulary)
        throw std::invalid_argument("kl_divergence: action vocabularies differ");
    if (states.empty()) return 0.0;
    double total = 0.0;
    for (const std::string& s : states) {
        std::vector<double> p = policy_probs(pi, s);
        std::vector<double> q = policy_probs(pi_old, s);
        double kl = 0.0;
        for (size_t a = 0; a < p.size(); ++a) {
            if (p[a] > 0.0) kl += p[a] * (std::log(p[a]) - std::log(q[a]));
        }
        total += kl;
    }
    return total / static_cast<double>(states.size());
}

LossStats navigating_loss(const TrainBatch& batch, const ClipConfig& cfg,
                          const PolicySnapshot& pi, const PolicySnapshot& pi_old) {
    if (batch.samples.empty()) throw std::invalid_argument("navigating_loss: empty batch");

    // Fixed reduction order: trajectory id, then original position.
    std::vector<size_t> order(batch.samples.size());
    std::iota(order.begin(), order.end(), size_t{0});
    std::stable_sort(order.begin(), order.end(), [&](size_t a, size_t b) {
        return batch.samples[a].trajectory_id < batch.samples[b].trajectory_id;
    });

    const bool token_mode = std::any_of(batch.samples.begin(), batch.samples.end(),
                                        [](const TrainSample& s) {
                                            return s.token_advantage.has_value();
                                        });

    const size_t n_samples = batch.samples.size();
    std::vector<SampleEval> evals(n_samples);

    // Total token count for the token-level mean; trajectory mode divides by N.
    long total_masked = 0;
    if (token_mode) {
        for (const TrainSample& s : batch.samples) {
            if (!s.token_advantage)
                throw std::invalid_argument(
                    "navigating_loss: mixed token/trajectory samples in one batch");
            total_masked += std::count(s.loss_mask.begin(), s.loss_mask.end(), true);
        }
        if (total_masked == 0) throw std::invalid_argument("navigating_loss: no unmasked tokens");
    }

    for (size_t i = 0; i < n_samples; ++i) {
        const TrainSample& s = batch.samples[i];
        SampleEval& ev = evals[i];
        ev.decision_coef.assign(s.decisions.size(), 0.0);

        if (!token_mode) {
            // trajectory-level ratio from the masked decision log-probs
            double log_ratio = 0.0;
            for (const Decision& d : s.decisions) {
                double lp_new = policy_log_prob(pi, d.state_key, d.action_id);
                double lp_old = s.logprob_old.empty()
                                    ? 0.0
                                    : s.logprob_old[static_cast<size_t>(d.token_index)];
                log_ratio += lp_new - lp_old;
            }
            if (!std::isfinite(log_ratio))
                throw NumericError("non-finite log ratio", s.trajectory_id);
            double ratio = std::exp(std::min(log_ratio, kRatioExpCap));
            if (!std::isfinite(ratio))
                throw NumericError("non-finite ratio", s.trajectory_id);

            double adv = s.advantage * s.decay;
            double eps_upper = select_clip_upper(adv, s.guidance, cfg);
            ev.term_sum = surrogate_term(ratio, adv, cfg.eps_low, eps_upper);
            ev.term_count = 1;
            ev.ratio_sum = ratio;
            ev.ratio_count = 1;
            ev.clip_total = 1;
            bool saturated = (adv > 0.0 && ratio > 1.0 + eps_upper) ||
                             (adv < 0.0 && ratio < 1.0 - cfg.eps_low);
            ev.clipped = saturated ? 1 : 0;
            if (!saturated && adv != 0.0) {
                double coef = adv * ratio;  // d(term)/d(log pi) for every decision
                for (size_t k = 0; k < s.decisions.size(); ++k) ev.decision_coef[k] = coef;
            }
        } else {
            // token-level: per-token ratios and advantages, mean over unmasked tokens
            const std::vector<double>& a_tok = *s.token_advantage;
            if (static_cast<int>(a_tok.size()) != s.n_tokens ||
                static_cast<int>(s.loss_mask.size()) != s.n_tokens)
                throw std::invalid_argument("navigating_loss: token arrays misaligned");

            std::vector<double> lp_new_at(static_cast<size_t>(s.n_tokens), 0.0);
            std::vector<int> decision_at(static_cast<size_t>(s.n_tokens), -1);
            for (size_t k = 0; k < s.decisions.size(); ++k) {
                const Decision& d = s.decisions[k];
                lp_new_at[static_cast<size_t>(d.token_index)] =
                    policy_log_prob(pi, d.state_key, d.action_id);
                decision_at[static_cast<size_t>(d.token_index)] = static_cast<int>(k);
            }
            for (int j = 0; j < s.n_tokens; ++j) {
                if (!s.loss_mask[static_cast<size_t>(j)]) continue;
                double lp_old = s.logprob_old.empty() ? 0.0 : s.logprob_old[static_cast<size_t>(j)];
                double log_ratio = lp_new_at[static_cast<size_t>(j)] - lp_old;
                if (!std::isfinite(log_ratio))
                    throw NumericError("non-finite token log ratio", s.trajectory_id);
                double ratio = std::exp(std::min(log_ratio, kRatioExpCap));
                double adv = a_tok[static_cast<size_t>(j)] * s.decay;
                double eps_upper = select_clip_upper(adv, s.guidance, cfg);
                ev.term_sum += surrogate_term(ratio, adv, cfg.eps_low, eps_upper);
                ev.term_count += 1;
                int k = decision_at[static_cast<size_t>(j)];
                bool saturated = (adv > 0.0 && ratio > 1.0 + eps_upper) ||
                                 (adv < 0.0 && ratio < 1.0 - cfg.eps_low);
                if (k >= 0) {
                    ev.ratio_sum += ratio;
                    ev.ratio_count += 1;
                    ev.clip_total += 1;
                    if (saturated) ev.clipped += 1;
                    if (!saturated && adv != 0.0) ev.decision_coef[static_cast<size_t>(k)] = adv * ratio;
                }
            }
        }
    }

    LossStats stats;
    double divisor = token_mode ? static_cast<double>(total_masked)
                                : static_cast<double>(n_samples);

    // Reduce in fixed order.
    double term_total = 0.0;
    double ratio_total = 0.0;
    long ratio_n = 0;
    long clipped_v = 0, clip_total_v = 0, clipped_e = 0, clip_total_e = 0;
    for (size_t idx : order) {
        const SampleEval& ev = evals[idx];
        term_total += ev.term_sum;
        ratio_total += ev.ratio_sum;
        ratio_n += ev.ratio_count;
        if (batch.samples[idx].guidance == Guidance::vanilla) {
            clipped_v += ev.clipped;
            clip_total_v += ev.clip_total;
        } else {
            clipped_e += ev.clipped;
            clip_total_e += ev.clip_total;
        }
    }
    stats.loss = -term_total / divisor;
    stats.mean_ratio = ratio_n > 0 ? ratio_total / static_cast<double>(ratio_n) : 0.0;
    stats.clip_frac_vanilla =
        clip_total_v > 0 ? static_cast<double>(clipped_v) / static_cast<double>(clip_total_v) : 0.0;
    stats.clip_frac_boosted =
        clip_total_e > 0 ? static_cast<double>(clipped_e) / static_cast<double>(clip_total_e) : 0.0;

    // Gradient: -1/divisor * sum over decisions coef * d(log pi)/d(logit).
    const size_t vocab = pi.action_vocabulary.size();
    const double inv_temp = pi.temperature > 0.0 ? 1.0 / pi.temperature : 0.0;
    for (size_t idx : order) {
        const TrainSample& s = batch.samples[idx];
        const SampleEval& ev = evals[idx];
        for (size_t k = 0; k < s.decisions.size(); ++k) {
            double coef = ev.decision_coef[k];
            if (coef == 0.0) continue;
            const Decision& d = s.decisions[k];
            std::vector<double> probs = policy_probs(pi, d.state_key);
            auto [it, inserted] = stats.grad.try_emplace(d.state_key,
                                                         std::vector<double>(vocab, 0.0));
            std::vector<double>& row = it->second;
            double scale = -coef / divisor * inv_temp;
            for (size_t a = 0; a < vocab; ++a) {
                double indicator = (static_cast<int>(a) == d.action_id) ? 1.0 : 0.0;
                row[a] += scale * (indicator - probs[a]);
            }
        }
    }

    // KL(pi || pi_old) over the visited decision states, plus its gradient.
    std::set<std::string> visited;
    for (const TrainSample& s : batch.samples)
        for (const Decision& d : s.decisions) visited.insert(d.state_key);
    if (cfg.kl_beta != 0.0 && !visited.empty()) {
        std::vector<std::string> states(visited.begin(), visited.end());
        stats.kl = kl_divergence(pi, pi_old, states);
        stats.loss += cfg.kl_beta * stats.kl;
        double inv_states = 1.0 / static_cast<double>(states.size());
        for (const std::string& skey : states) {
            std::vector<double> p = policy_probs(pi, skey);
            std::vector<double> q = policy_probs(pi_old, skey);
            double kl_s = 0.0;
            for (size_t a = 0; a < p.size(); ++a)
                if (p[a] > 0.0) kl_s += p[a] * (std::log(p[a]) - std::log(q[a]));
            auto [it, inserted] = stats.grad.try_emplace(skey, std::vector<double>(vocab, 0.0));
            std::vector<double>& row = it->second;
            for (size_t a = 0; a < vocab; ++a) {
                if (p[a] <= 0.0) continue;
                double dkl = p[a] * ((std::log(p[a]) - std::log(q[a])) - kl_s);
                row[a] += cfg.kl_beta * inv_states * dkl * inv_temp;
            }
        }
    } else if (!visited.empty()) {
        std::vector<std::string> states(visited.begin(), visited.end());
        stats.kl = kl_divergence(pi, pi_old, states);
    }

    return stats;
}

void sgd_update(PolicySnapshot& policy, const Gradient& grad, double learning_rate) {
    const size_t vocab = policy.action_vocabulary.size();
    for (const auto& [state, row] : grad) {
        if (row.size() != vocab)
            throw std::invalid_argument("sgd_update: gradient row size mismatch at " + state);
        auto [it, inserted] = policy.logits.try_emplace(state, std::vector<double>(vocab, 0.0));
        for (size_t a = 0; a < vocab; ++a) it->second[a] -= learning_rate * row[a];
    }
}

double finite_diff_check(const std::function<double(const PolicySnapshot&)>& loss_fn,
                         const PolicySnapshot& theta, const Gradient& analytic, double h,
                         double denom_floor) {
    if (h <= 0.0) throw std::invalid_argument("finite_diff_check: h must be positive");
    double max_rel = 0.0;
    PolicySnapshot probe = theta;
    for (const auto& [state, row] : theta.logits) {
        for (size_t a = 0; a < row.size(); ++a) {
            double saved = probe.logits[state][a];
            probe.logits[state][a] = saved + h;
            double up = loss_fn(probe);
            probe.logits[state][a] = saved - h;
            double down = loss_fn(probe);
            probe.logits[state][a] = saved;
            double fd = (up - down) / (2.0 * h);
            double an = 0.0;
            auto it = analytic.find(state);
            if (it != analytic.end()) an = it->second[a];
            if (std::fabs(fd) < 1e-12 && std::fabs(an) < 1e-12) continue;
            double denom = std::max({std::fabs(fd), std::fabs(an), denom_floor});
            max_rel = std::max(max_rel, std::fabs(fd - an) / denom);
        }
    }
    return max_rel;
}

}  // namespace evolver
