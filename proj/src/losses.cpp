#include "vpr/losses.hpp"

#include "vpr/ops.hpp"

namespace vpr {

namespace {

void check_open_unit_interval(const Tensor& scores, const char* who) {
    if ((scores.array() <= 0.0).any() || (scores.array() >= 1.0).any())
        throw DomainError(std::string(who) + ": score outside (0,1)");
}

}  // namespace

Tensor vpr_loss(const Tensor& fq, const Tensor& fp, const Tensor& fn, double margin) {
    if (fq.size() != fp.size() || fq.size() != fn.size())
        throw DimensionError("vpr_loss: descriptor length mismatch");
    Tensor d_pos = euclidean_distance(fq, fp);
    Tensor d_neg = euclidean_distance(fq, fn);
    return relu(add_scalar(sub(d_pos, d_neg), margin));
}

Tensor semseg_loss(const Tensor& logits, const std::vector<std::uint8_t>& labels,
                   int ignore_id) {
    return masked_nll(log_softmax_channels(logits), labels, ignore_id);
}

Tensor combined_loss(const Tensor& lvpr, const Tensor& lseg, double alpha) {
    if (!lseg.defined() || alpha == 0.0) {
        // Keep the graph shape independent of whether the term contributes.
        return lseg.defined() ? add(lvpr, mul_scalar(lseg, 0.0)) : lvpr;
    }
    return add(lvpr, mul_scalar(lseg, alpha));
}

Tensor discr_loss(const Tensor& source_scores, const Tensor& target_scores) {
    check_open_unit_interval(source_scores, "discr_loss(source)");
    check_open_unit_interval(target_scores, "discr_loss(target)");
    Tensor ls = neg(mean_all(log(source_scores)));
    Tensor lt = neg(mean_all(log(rsub_scalar(1.0, target_scores))));
    return add(ls, lt);
}

Tensor adv_loss(const Tensor& target_scores) {
    check_open_unit_interval(target_scores, "adv_loss");
    return neg(mean_all(log(target_scores)));
}

std::pair<Tensor, Tensor> total_loss(const Tensor& lvpr_semseg, const Tensor& ladv,
                                     const Tensor& ldiscr, double beta, double gamma) {
    Tensor main = ladv.defined() ? add(lvpr_semseg, mul_scalar(ladv, beta)) : lvpr_semseg;
    Tensor discr = ldiscr.defined() ? mul_scalar(ldiscr, gamma) : Tensor();
    return {main, discr};
}

}  // namespace vpr
