#include "vpr/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "vpr/ops.hpp"
#include "vpr/retrieval.hpp"
#include "vpr/rng.hpp"
#include "vpr/serialize.hpp"

namespace fs = std::filesystem;

namespace vpr {

double poly_lr(std::int64_t t, std::int64_t total_steps, double lr0, double power) {
    if (total_steps <= 0) throw ParameterError("poly_lr: total_steps must be positive");
    if (t < 0 || t > total_steps) throw ParameterError("poly_lr: step outside [0, T]");
    return lr0 * std::pow(1.0 - static_cast<double>(t) / static_cast<double>(total_steps),
                          power);
}

Optimizer::Optimizer(const OptimizerConfig& cfg, NamedParams params)
    : cfg_(cfg), params_(std::move(params)) {
    m_.reserve(params_.size());
    v_.reserve(params_.size());
    for (const auto& [name, t] : params_) {
        m_.push_back(Array::Zero(t.size()));
        v_.push_back(Array::Zero(t.size()));
        decay_.push_back(!name.ends_with(".b"));
    }
}

void Optimizer::zero_grad() {
    for (auto& [name, t] : params_) t.zero_grad();
}

void Optimizer::step(double lr) {
    ++step_count_;
    for (std::size_t i = 0; i < params_.size(); ++i) {
        Tensor& t = params_[i].second;
        Array g = t.has_grad() ? t.grad_array() : Array::Zero(t.size());
        if (decay_[i] && cfg_.weight_decay != 0.0) g += cfg_.weight_decay * t.array();
        if (cfg_.kind == OptKind::sgd_momentum) {
            m_[i] = cfg_.momentum * m_[i] + g;
            t.array() -= lr * m_[i];
        } else {
            m_[i] = cfg_.beta1 * m_[i] + (1.0 - cfg_.beta1) * g;
            v_[i] = cfg_.beta2 * v_[i] + (1.0 - cfg_.beta2) * g.square();
            const double bc1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(step_count_));
            const double bc2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(step_count_));
            t.array() -= lr * (m_[i] / bc1) / ((v_[i] / bc2).sqrt() + cfg_.eps);
        }
    }
}

FreezeGuard::FreezeGuard(const NamedParams& params) {
    for (const auto& [name, t] : params) {
        saved_.emplace_back(t, t.requires_grad());
        Tensor tt = t;
        tt.set_requires_grad(false);
    }
}

FreezeGuard::~FreezeGuard() {
    for (auto& [t, rg] : saved_) t.set_requires_grad(rg);
}

namespace {

void check_finite(double v, const char* name, std::int64_t step) {
    if (!std::isfinite(v)) {
        std::ostringstream os;
        os << "step " << step << ": non-finite " << name << " loss (" << v << ")";
        throw TrainAbort(os.str());
    }
}

// Decoder softmax at image resolution; the discriminator consumes this.
Tensor decoder_probs(const VprModel& model, const ForwardBundle& bundle, int h, int w) {
    SegOutput seg = model.segment_from(bundle.f4, bundle.M);
    Tensor up = upsample_nearest(seg.logits, h, w);
    return vpr::exp(log_softmax_channels(up));
}

}  // namespace

StepMetrics step_main(const TrainBatch& batch, VprModel& model, const LossWeights& weights,
                      Optimizer& opt, double lr) {
    weights.validate();
    const AblationFlags& flags = model.config().ablation;
    StepMetrics metrics;

    opt.zero_grad();
    GradGraph graph;
    GradGraph::Scope scope(graph);
    FreezeGuard freeze(model.discr_parameters());

    ForwardBundle q = model.forward_descriptor(batch.query);
    ForwardBundle p = model.forward_descriptor(batch.positive);
    ForwardBundle n = model.forward_descriptor(batch.negative);
    Tensor lvpr = vpr_loss(q.descriptor, p.descriptor, n.descriptor, weights.margin);
    metrics.l_vpr = lvpr.value();
    check_finite(metrics.l_vpr, "vpr", opt.step_count());

    Tensor lseg;
    Tensor src_logits_up;
    const bool need_src_probs = flags.da && batch.target_image.defined();
    if (flags.semseg || need_src_probs) {
        SegOutput seg = model.segment_from(q.f4, q.M);
        src_logits_up =
            upsample_nearest(seg.logits, batch.query.extent(1), batch.query.extent(2));
    }
    if (flags.semseg) {
        if (batch.labels.empty())
            throw ContractViolation("step_main: semseg enabled but batch has no labels");
        lseg = semseg_loss(src_logits_up, batch.labels);
        metrics.l_seg = lseg.value();
        check_finite(metrics.l_seg, "semseg", opt.step_count());
    }
    Tensor lcomb = flags.semseg ? combined_loss(lvpr, lseg, weights.alpha) : lvpr;

    Tensor ladv;
    if (need_src_probs) {
        ForwardBundle t = model.forward_descriptor(batch.target_image);
        Tensor tgt_probs = decoder_probs(model, t, batch.target_image.extent(1),
                                         batch.target_image.extent(2));
        Tensor dt = model.discriminate(tgt_probs);
        ladv = adv_loss(dt);
        metrics.l_adv = ladv.value();
        check_finite(metrics.l_adv, "adv", opt.step_count());
        metrics.source_probs = vpr::exp(log_softmax_channels(src_logits_up)).detach();
        metrics.target_probs = tgt_probs.detach();
    }

    Tensor objective = total_loss(lcomb, ladv, Tensor(), weights.beta, weights.gamma).first;
    check_finite(objective.value(), "total", opt.step_count());
    graph.backward(objective);
    opt.step(lr);
    return metrics;
}

double step_discr(const Tensor& source_feats, const Tensor& target_feats, VprModel& model,
                  double gamma, Optimizer& opt, double lr) {
    if (source_feats.requires_grad() || target_feats.requires_grad())
        throw ContractViolation("step_discr: features must be detached");
    GradGraph graph;
    GradGraph::Scope scope(graph);
    Tensor ds = model.discriminate(source_feats);
    Tensor dtg = model.discriminate(target_feats);
    Tensor l = discr_loss(ds, dtg);
    const double value = l.value();
    if (gamma == 0.0) return value;  // evaluate only; parameters untouched
    Tensor objective = total_loss(Tensor::scalar(0.0), Tensor(), l, 0.0, gamma).second;
    opt.zero_grad();
    graph.backward(objective);
    opt.step(lr);
    return value;
}

namespace {

// Leave-one-out Recall@1 over the source mining pool: the paper validates on
// the source domain; at desk scale the pool doubles as its own gallery.
double loo_recall1(const DescriptorCache& cache, const DatasetManifest& manifest,
                   double radius_m) {
    int evaluated = 0, hits = 0;
    for (const auto& [qid, qvec] : cache.vectors()) {
        bool has_positive = false;
        RecordId best_id = 0;
        double best_d = 0.0;
        bool have_best = false;
        for (const auto& [gid, gvec] : cache.vectors()) {
            if (gid == qid) continue;
            if (geo_distance(manifest.coordinate(gid), manifest.coordinate(qid)) <= radius_m)
                has_positive = true;
            const double d = (gvec - qvec).norm();
            if (!have_best || d < best_d || (d == best_d && gid < best_id)) {
                have_best = true;
                best_d = d;
                best_id = gid;
            }
        }
        if (!has_positive || !have_best) continue;
        ++evaluated;
        if (geo_distance(manifest.coordinate(best_id), manifest.coordinate(qid)) <= radius_m)
            ++hits;
    }
    return evaluated > 0 ? static_cast<double>(hits) / evaluated : 0.0;
}

std::string format_metric(double v) {
    std::ostringstream os;
    os.precision(10);
    os << v;
    return os.str();
}

struct Augmenter {
    bool flip = false, crop = false;
    int crop_h = 0, crop_w = 0;
    Rng rng;

    explicit Augmenter(std::uint64_t seed) : rng(seed) {}

    // Applies one independent draw to the image; the label map, when given,
    // receives the identical transform.
    void apply(Tensor& image, std::vector<std::uint8_t>* labels, int* lh, int* lw) {
        if (crop) {
            const int h = image.extent(1), w = image.extent(2);
            if (crop_h > h || crop_w > w)
                throw ParameterError("augment: crop larger than image");
            const int top = static_cast<int>(rng.uniform_index(
                static_cast<std::uint64_t>(h - crop_h + 1)));
            const int left = static_cast<int>(rng.uniform_index(
                static_cast<std::uint64_t>(w - crop_w + 1)));
            image = crop3d(image, top, left, crop_h, crop_w);
            if (labels) {
                std::vector<std::uint8_t> cropped(
                    static_cast<std::size_t>(crop_h) * crop_w);
                for (int y = 0; y < crop_h; ++y)
                    for (int x = 0; x < crop_w; ++x)
                        cropped[static_cast<std::size_t>(y) * crop_w + x] =
                            (*labels)[static_cast<std::size_t>(y + top) * (*lw) + (x + left)];
                *labels = std::move(cropped);
                *lh = crop_h;
                *lw = crop_w;
            }
        }
        if (flip && rng.uniform() < 0.5) {
            image = flip_w(image);
            if (labels) {
                for (int y = 0; y < *lh; ++y)
                    std::reverse(labels->begin() + static_cast<std::ptrdiff_t>(y) * (*lw),
                                 labels->begin() + static_cast<std::ptrdiff_t>(y + 1) * (*lw));
            }
        }
    }
};

}  // namespace

FitResult fit(const TrainConfig& cfg, const DatasetManifest& source,
              const DatasetManifest* target, std::uint64_t seed, const std::string& out_dir) {
    cfg.validate();
    fs::create_directories(out_dir);

    VprModel model(cfg.model, seed);
    Optimizer opt_main(cfg.main_opt, model.main_parameters());
    Optimizer opt_discr(cfg.discr_opt, model.discr_parameters());

    const std::vector<RecordId> pool = source.mining_pool_ids();
    if (cfg.total_steps > 0 && pool.empty())
        throw DomainError("fit: source manifest has no mining pool records");

    std::vector<RecordId> target_ids;
    if (cfg.model.ablation.da) {
        const DatasetManifest& tm = target ? *target : source;
        target_ids = tm.ids_with(Domain::target);
        if (cfg.total_steps > 0 && target_ids.empty())
            throw DomainError("fit: domain adaptation enabled but no target records");
    }
    const DatasetManifest& target_manifest = target ? *target : source;

    Rng order_rng(substream_seed(seed, "mining.order"));
    Rng target_rng(substream_seed(seed, "target.order"));
    Augmenter augment(substream_seed(seed, "augment"));
    augment.flip = cfg.random_flip;
    augment.crop = cfg.random_crop;
    augment.crop_h = cfg.crop_height;
    augment.crop_w = cfg.crop_width;

    DescriptorCache cache;

    std::ofstream metrics(fs::path(out_dir) / "metrics.csv", std::ios::trunc);
    if (!metrics) throw IoError("cannot write metrics.csv in " + out_dir);
    metrics << "step,l_vpr,l_seg,l_adv,l_discr,lr,recall1\n";

    std::ofstream triplet_log;
    if (cfg.triplet_log) {
        triplet_log.open(fs::path(out_dir) / "triplets.csv", std::ios::trunc);
        triplet_log << "iteration,query_id,pos_id,neg_id,d_pos,d_neg\n";
    }

    FitResult result;
    std::vector<RecordId> order;
    std::size_t order_pos = 0;
    auto next_query = [&]() -> RecordId {
        if (order_pos >= order.size()) {
            order = pool;
            for (std::size_t i = order.size(); i > 1; --i)
                std::swap(order[i - 1],
                          order[static_cast<std::size_t>(order_rng.uniform_index(i))]);
            order_pos = 0;
        }
        return order[order_pos++];
    };

    std::vector<RecordId> target_order;
    std::size_t target_pos = 0;
    auto next_target = [&]() -> RecordId {
        if (target_pos >= target_order.size()) {
            target_order = target_ids;
            for (std::size_t i = target_order.size(); i > 1; --i)
                std::swap(target_order[i - 1],
                          target_order[static_cast<std::size_t>(target_rng.uniform_index(i))]);
            target_pos = 0;
        }
        return target_order[target_pos++];
    };

    for (int step = 0; step < cfg.total_steps; ++step) {
        if (step % cfg.mining.cache_refresh_every == 0) refresh_cache(model, source, cache);

        // Mine the next usable query; unusable ones are counted, never dropped
        // silently.
        Triplet triplet{};
        bool mined = false;
        for (std::size_t attempts = 0; attempts < pool.size() + 1; ++attempts) {
            const RecordId qid = next_query();
            try {
                triplet = mine_triplet(qid, source, cache, cfg.mining,
                                       substream_seed(seed, "mine." + std::to_string(step)));
                mined = true;
                break;
            } catch (const QueryUnusable&) {
                ++result.unusable;
            }
        }
        if (!mined) throw DomainError("fit: no usable training query in the pool");
        ++result.mined;
        if (cfg.triplet_log)
            triplet_log << step << ',' << triplet.query_id << ',' << triplet.pos_id << ','
                        << triplet.neg_id << ',' << format_metric(triplet.d_pos) << ','
                        << format_metric(triplet.d_neg) << "\n";

        TrainBatch batch;
        batch.query = source.load_payload(triplet.query_id);
        batch.positive = source.load_payload(triplet.pos_id);
        batch.negative = source.load_payload(triplet.neg_id);
        if (cfg.model.ablation.semseg) {
            const auto& rec = source.record(triplet.query_id);
            LabelMap lm = load_label_map(source.resolve(rec.labels), cfg.model.num_classes);
            batch.labels = lm.ids;
            batch.label_h = lm.h;
            batch.label_w = lm.w;
        }
        augment.apply(batch.query, cfg.model.ablation.semseg ? &batch.labels : nullptr,
                      &batch.label_h, &batch.label_w);
        augment.apply(batch.positive, nullptr, nullptr, nullptr);
        augment.apply(batch.negative, nullptr, nullptr, nullptr);
        if (cfg.model.ablation.da)
            batch.target_image = target_manifest.load_payload(next_target());

        const double lr_main = poly_lr(step, cfg.total_steps, cfg.main_opt.lr0, cfg.poly_power);
        const double lr_discr =
            poly_lr(step, cfg.total_steps, cfg.discr_opt.lr0, cfg.poly_power);

        StepMetrics sm = step_main(batch, model, cfg.weights, opt_main, lr_main);
        if (cfg.model.trainable_p) {
            // Projection back to the GeM-feasible set.
            Tensor p4 = model.p4_tensor(), p5 = model.p5_tensor();
            p4.array() = p4.array().max(1.0);
            p5.array() = p5.array().max(1.0);
        }
        double l_discr = 0.0;
        if (cfg.model.ablation.da && sm.source_probs.defined()) {
            l_discr = step_discr(sm.source_probs, sm.target_probs, model, cfg.weights.gamma,
                                 opt_discr, lr_discr);
            check_finite(l_discr, "discr", step);
        }

        std::string recall_cell;
        if (cfg.eval_every > 0 && (step + 1) % cfg.eval_every == 0) {
            refresh_cache(model, source, cache);
            recall_cell = format_metric(loo_recall1(cache, source, 25.0));
        }
        metrics << step << ',' << format_metric(sm.l_vpr) << ',' << format_metric(sm.l_seg)
                << ',' << format_metric(sm.l_adv) << ',' << format_metric(l_discr) << ','
                << format_metric(lr_main) << ',' << recall_cell << "\n";
        ++result.steps;
    }

    refresh_cache(model, source, cache);
    result.final_recall1 = loo_recall1(cache, source, 25.0);
    metrics << cfg.total_steps << ",,,,,," << format_metric(result.final_recall1) << "\n";

    result.checkpoint_path = (fs::path(out_dir) / "checkpoint.vprc").string();
    save_checkpoint(result.checkpoint_path, model.parameters());
    result.metrics_path = (fs::path(out_dir) / "metrics.csv").string();
    result.unusable_fraction =
        (result.mined + result.unusable) > 0
            ? static_cast<double>(result.unusable) / (result.mined + result.unusable)
            : 0.0;
    if (!metrics) throw IoError("metrics write failed in " + out_dir);
    return result;
}

}  // namespace vpr
