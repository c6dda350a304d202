#pragma once

#include <cstdint>
#include <utility>
#include <vector>

#include "vpr/tensor.hpp"

namespace vpr {

struct LossWeights {
    double margin = 0.1;
    double alpha = 0.5;
    double beta = 0.0005;
    double gamma = 0.5;

    void validate() const {
        if (margin <= 0.0) throw ParameterError("loss weights: margin must be positive");
        if (alpha < 0.0 || beta < 0.0 || gamma < 0.0)
            throw ParameterError("loss weights: alpha/beta/gamma must be nonnegative");
    }
};

// Triplet margin hinge: max(0, d(Fq,Fp) + m - d(Fq,Fn)), Euclidean d.
Tensor vpr_loss(const Tensor& fq, const Tensor& fp, const Tensor& fn, double margin);

// Mean over non-ignored pixels of the per-pixel cross entropy on logits
// (|C|×H×W) against class-id labels (row-major, H*W entries, 255 = ignore).
Tensor semseg_loss(const Tensor& logits, const std::vector<std::uint8_t>& labels,
                   int ignore_id = 255);

// L_VPR + alpha * L_SemSeg. The attention detachment lives in the decoder's
// guided forward, so the alpha term cannot reach attention parameters.
Tensor combined_loss(const Tensor& lvpr, const Tensor& lseg, double alpha);

// -mean(log Ds) - mean(log(1 - Dt)); D predicts probability-of-source.
// Scores must lie strictly inside (0,1).
Tensor discr_loss(const Tensor& source_scores, const Tensor& target_scores);

// -mean(log Dt): target scored as if it were source.
Tensor adv_loss(const Tensor& target_scores);

// Eq-style split objectives: {main model, discriminator}. The two update
// disjoint parameter sets.
std::pair<Tensor, Tensor> total_loss(const Tensor& lvpr_semseg, const Tensor& ladv,
                                     const Tensor& ldiscr, double beta, double gamma);

}  // namespace vpr
