#pragma once

#include <cstdint>
#include <optional>
#include <string>

#include "vpr/config.hpp"
#include "vpr/dataset.hpp"
#include "vpr/losses.hpp"
#include "vpr/mining.hpp"
#include "vpr/model.hpp"

namespace vpr {

double poly_lr(std::int64_t t, std::int64_t total_steps, double lr0, double power = 0.9);

// Per-parameter state for SGD-momentum or Adam. Weight decay enters as an L2
// gradient term on every parameter whose name does not end in ".b".
class Optimizer {
public:
    Optimizer(const OptimizerConfig& cfg, NamedParams params);
    void zero_grad();
    void step(double lr);
    const NamedParams& params() const { return params_; }
    std::int64_t step_count() const { return step_count_; }

private:
    OptimizerConfig cfg_;
    NamedParams params_;
    std::vector<Array> m_;  // momentum / first moment
    std::vector<Array> v_;  // second moment (Adam)
    std::vector<bool> decay_;
    std::int64_t step_count_ = 0;
};

// Temporarily clears requires_grad on a parameter set (two-phase updates).
class FreezeGuard {
public:
    explicit FreezeGuard(const NamedParams& params);
    ~FreezeGuard();
    FreezeGuard(const FreezeGuard&) = delete;
    FreezeGuard& operator=(const FreezeGuard&) = delete;

private:
    std::vector<std::pair<Tensor, bool>> saved_;
};

struct TrainBatch {
    Tensor query, positive, negative;
    std::vector<std::uint8_t> labels;  // query label map at image resolution
    int label_h = 0, label_w = 0;
    Tensor target_image;  // undefined when DA is off
};

struct StepMetrics {
    double l_vpr = 0.0, l_seg = 0.0, l_adv = 0.0, l_discr = 0.0;
    Tensor source_probs;  // detached decoder softmax for the discriminator phase
    Tensor target_probs;
};

// One update of the encoder/attention/pooling/decoder parameters on
// L_VPR + alpha*L_SemSeg + beta*L_adv, discriminator frozen.
StepMetrics step_main(const TrainBatch& batch, VprModel& model, const LossWeights& weights,
                      Optimizer& opt, double lr);

// One Adam update of the discriminator on gamma*L_discr. Features must be
// detached; main-model parameters are untouched. gamma == 0 only evaluates.
double step_discr(const Tensor& source_feats, const Tensor& target_feats, VprModel& model,
                  double gamma, Optimizer& opt, double lr);

struct FitResult {
    std::string checkpoint_path;
    std::string metrics_path;
    int steps = 0;
    int mined = 0;
    int unusable = 0;  // QueryUnusable count, reported, never dropped
    double unusable_fraction = 0.0;
    double final_recall1 = 0.0;
};

// The full training loop: alternates step_main/step_discr 1:1, refreshes the
// mining cache per policy, evaluates source Recall@1 at intervals and writes
// a checkpoint plus a metrics CSV. Deterministic given the seed.
FitResult fit(const TrainConfig& cfg, const DatasetManifest& source,
              const DatasetManifest* target, std::uint64_t seed, const std::string& out_dir);

}  // namespace vpr
