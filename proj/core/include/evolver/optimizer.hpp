#ifndef EVOLVER_OPTIMIZER_HPP
#define EVOLVER_OPTIMIZER_HPP

#include <functional>
#include <map>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "evolver/types.hpp"

namespace evolver {

struct ClipConfig {
    double eps_low = 0.28;
    double eps_high = 0.28;
    double eps_high_boost = 0.6;  // upper bound for positive-advantage experience samples
    double kl_beta = 0.001;
};

// One policy decision inside a training sample: the first token of an action
// span carries the whole decision's log-prob.
struct Decision {
    int token_index = 0;
    std::string state_key;
    int action_id = 0;
    int step_index = 0;
};

struct TrainSample {
    std::string trajectory_id;
    Guidance guidance = Guidance::vanilla;
    double advantage = 0.0;  // trajectory-level A-hat
    double decay = 1.0;      // hybrid advantage decay, 1 when unflagged
    int n_tokens = 0;
    std::vector<bool> loss_mask;      // true on llm-generated tokens
    std::vector<double> logprob_old;  // per token; zero off decision tokens
    std::optional<std::vector<double>> token_advantage;  // A_tok, enables token-level loss
    std::vector<Decision> decisions;
};

struct TrainBatch {
    std::vector<TrainSample> samples;
};

// Gradient w.r.t. tabular logits, keyed like PolicySnapshot::logits.
using Gradient = std::map<std::string, std::vector<double>>;

struct LossStats {
    double loss = 0.0;
    Gradient grad;
    double mean_ratio = 0.0;
    double clip_frac_vanilla = 0.0;
    double clip_frac_boosted = 0.0;
    double kl = 0.0;
};

class NumericError : public std::runtime_error {
public:
    NumericError(std::string message, std::string trajectory_id)
        : std::runtime_error(std::move(message)), trajectory_id(std::move(trajectory_id)) {}
    std::string trajectory_id;
};

// --- tabular softmax policy math -------------------------------------------

std::vector<double> policy_probs(const PolicySnapshot& p, const std::string& state_key);
double policy_log_prob(const PolicySnapshot& p, const std::string& state_key, int action_id);
// Greedy at temperature 0, otherwise samples from the tempered softmax.
// Optional logit biases shift sampling only; reported log-probs are unbiased.
int policy_sample(const PolicySnapshot& p, const std::string& state_key, uint64_t rng_state,
                  const std::map<int, double>* bias = nullptr);

// --- Eq.-style operations ---------------------------------------------------

// Standardized advantage over the full mixed group: (R - mean) / (std + eps).
// Zero-variance groups neutralize to all zeros.
std::vector<double> group_advantage(const std::vector<double>& rewards, double eps_norm = 1e-8);

// Experience-guided samples with strictly positive advantage get the boosted
// upper clip bound; everything else uses the vanilla bound.
double select_clip_upper(double advantage, Guidance guidance, const ClipConfig& cfg);

// min(r*A, clip(r, 1-eps_low, 1+eps_upper)*A) — one surrogate term.
double surrogate_term(double ratio, double advantage, double eps_low, double eps_upper);

// Surrogate loss with selective boosting and KL penalty. Reduction order is
// fixed by trajectory id so results are bit-stable under any parallel split.
// Throws NumericError (naming the trajectory) on non-finite ratios.
LossStats navigating_loss(const TrainBatch& batch, const ClipConfig& cfg,
                          const PolicySnapshot& pi, const PolicySnapshot& pi_old);

// Mean exact categorical KL(pi || pi_old) over the given states.
double kl_divergence(const PolicySnapshot& pi, const PolicySnapshot& pi_old,
                     const std::vector<std::string>& states);

void sgd_update(PolicySnapshot& policy, const Gradient& grad, double learning_rate);

// Central-difference verification of an analytic gradient. Returns the max
// relative error over coordinates, skipping those where both gradients are
// below 1e-12. The denominator floor keeps float noise at near-zero
// coordinates from registering as relative error.
double finite_diff_check(const std::function<double(const PolicySnapshot&)>& loss_fn,
                         const PolicySnapshot& theta, const Gradient& analytic, double h,
                         double denom_floor = 1e-4);

}  // namespace evolver

#endif  // EVOLVER_OPTIMIZER_HPP
