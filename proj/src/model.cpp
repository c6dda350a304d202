#include "vpr/model.hpp"

#include <algorithm>
#include <cmath>

namespace vpr {

Tensor xavier_uniform(const Shape& shape, int fan_in, int fan_out, Rng& rng) {
    const double a = std::sqrt(6.0 / (fan_in + fan_out));
    Array data(numel(shape));
    for (Eigen::Index i = 0; i < data.size(); ++i) data(i) = rng.uniform(-a, a);
    return Tensor::from_array(shape, std::move(data), true);
}

Tensor normal_init(const Shape& shape, double stddev, Rng& rng) {
    Array data(numel(shape));
    for (Eigen::Index i = 0; i < data.size(); ++i) data(i) = rng.normal(0.0, stddev);
    return Tensor::from_array(shape, std::move(data), true);
}

namespace {

ConvLayer make_conv_xavier(int c_in, int c_out, int k, int stride, int pad, Rng& rng) {
    ConvLayer l;
    l.w = xavier_uniform({c_out, c_in, k, k}, c_in * k * k, c_out * k * k, rng);
    l.b = Tensor::zeros({c_out}, true);
    l.stride = stride;
    l.pad = pad;
    return l;
}

ConvLayer make_conv_normal(int c_in, int c_out, int k, int stride, int pad, double stddev,
                           Rng& rng) {
    ConvLayer l;
    l.w = normal_init({c_out, c_in, k, k}, stddev, rng);
    l.b = Tensor::zeros({c_out}, true);
    l.stride = stride;
    l.pad = pad;
    return l;
}

void collect_conv(const std::string& name, const ConvLayer& l, NamedParams& out) {
    out.emplace_back(name + ".w", l.w);
    out.emplace_back(name + ".b", l.b);
}

}  // namespace

int EncoderConfig::total_stride() const {
    int s = 1;
    for (int st : stage_strides) s *= st;
    return s * 2;  // includes the f5 stage
}

void EncoderConfig::validate() const {
    if (c4 < 1 || c5 < 1) throw ParameterError("encoder: c4 and c5 must be >= 1");
    if (in_channels < 1) throw ParameterError("encoder: in_channels must be >= 1");
    if (stage_strides.empty()) throw ParameterError("encoder: at least one stage");
    for (int s : stage_strides)
        if (s != 2) throw ParameterError("encoder: only stride-2 stages are supported");
    if (kernel < 2 || kernel % 2 != 0)
        throw ParameterError("encoder: kernel must be even and >= 2 for exact halving");
}

Encoder::Encoder(const EncoderConfig& cfg, Rng& rng) : cfg_(cfg) {
    cfg_.validate();
    const int n = static_cast<int>(cfg_.stage_strides.size());
    const int k = cfg_.kernel;
    const int pad = k / 2 - 1;  // out = floor(in/2) at stride 2
    int c_in = cfg_.in_channels;
    for (int i = 0; i < n; ++i) {
        const int shift = n - 1 - i;
        int c_out = (i == n - 1) ? cfg_.c4 : std::min(cfg_.c4, std::max(cfg_.c4 >> shift, 4));
        stages_.push_back(make_conv_xavier(c_in, c_out, k, cfg_.stage_strides[i], pad, rng));
        c_in = c_out;
    }
    to_f5_ = make_conv_xavier(cfg_.c4, cfg_.c5, k, 2, pad, rng);
}

FeatureMaps Encoder::forward(const Tensor& image) const {
    if (image.ndim() != 3 || image.extent(0) != cfg_.in_channels)
        throw DimensionError("encoder: expected " + std::to_string(cfg_.in_channels) +
                             "×H×W image, got " + shape_str(image.shape()));
    int h = image.extent(1), w = image.extent(2);
    for (std::size_t i = 0; i <= stages_.size(); ++i) {
        h /= 2;
        w /= 2;
        if (h < 1 || w < 1)
            throw DimensionError("encoder: image " + shape_str(image.shape()) +
                                 " smaller than total stride " +
                                 std::to_string(cfg_.total_stride()));
    }
    Tensor x = image;
    for (const ConvLayer& stage : stages_) x = relu(stage(x));
    Tensor f4 = x;
    Tensor f5 = relu(to_f5_(x));
    return {f4, f5};
}

void Encoder::collect_params(const std::string& prefix, NamedParams& out) const {
    for (std::size_t i = 0; i < stages_.size(); ++i)
        collect_conv(prefix + ".stage" + std::to_string(i), stages_[i], out);
    collect_conv(prefix + ".f5", to_f5_, out);
}

AttentionModule::AttentionModule(int c4, Rng& rng, int bank_stride) {
    bank3_ = make_conv_xavier(c4, kBankChannels, 3, bank_stride, 1, rng);
    bank5_ = make_conv_xavier(c4, kBankChannels, 5, bank_stride, 2, rng);
    bank7_ = make_conv_xavier(c4, kBankChannels, 7, bank_stride, 3, rng);
    fuse_ = make_conv_xavier(3 * kBankChannels, 1, 1, 1, 0, rng);
}

Tensor AttentionModule::forward(const Tensor& f4) const {
    if (f4.ndim() != 3 || f4.extent(0) != bank3_.w.extent(1))
        throw DimensionError("attention: feature channels do not match bank channels");
    const int h = f4.extent(1), w = f4.extent(2);
    Tensor a3 = upsample_nearest(bank3_(f4), h, w);
    Tensor a5 = upsample_nearest(bank5_(f4), h, w);
    Tensor a7 = upsample_nearest(bank7_(f4), h, w);
    Tensor fused = fuse_(concat({a3, a5, a7}, 0));
    return softplus(fused);
}

void AttentionModule::collect_params(const std::string& prefix, NamedParams& out) const {
    collect_conv(prefix + ".bank3", bank3_, out);
    collect_conv(prefix + ".bank5", bank5_, out);
    collect_conv(prefix + ".bank7", bank7_, out);
    collect_conv(prefix + ".fuse", fuse_, out);
}

SegDecoder::SegDecoder(int in_channels, int num_classes, int hidden, Rng& rng)
    : num_classes_(num_classes) {
    if (num_classes < 2) throw ParameterError("decoder: need at least two classes");
    if (hidden < 1) throw ParameterError("decoder: hidden width must be >= 1");
    int c_in = in_channels;
    for (int i = 0; i < 3; ++i) {
        body_.push_back(make_conv_normal(c_in, hidden, 3, 1, 1, 0.01, rng));
        c_in = hidden;
    }
    classifier_ = make_conv_normal(hidden, num_classes, 1, 1, 0, 0.01, rng);
}

SegOutput SegDecoder::forward(const Tensor& f4, const Tensor& M, bool guided) const {
    Tensor x = f4;
    for (const ConvLayer& l : body_) x = relu(l(x));
    Tensor features = x;
    if (guided) {
        if (!M.defined()) throw ContractViolation("decoder: guided forward needs M");
        x = broadcast_mul(features, M.detach());
    }
    return {classifier_(x), features};
}

void SegDecoder::collect_params(const std::string& prefix, NamedParams& out) const {
    for (std::size_t i = 0; i < body_.size(); ++i)
        collect_conv(prefix + ".conv" + std::to_string(i), body_[i], out);
    collect_conv(prefix + ".cls", classifier_, out);
}

Discriminator::Discriminator(int in_channels, const std::array<int, 5>& channels, Rng& rng) {
    int c_in = in_channels;
    for (int c_out : channels) {
        layers_.push_back(make_conv_normal(c_in, c_out, 4, 2, 1, 0.02, rng));
        c_in = c_out;
    }
}

Tensor Discriminator::forward(const Tensor& x) const {
    if (x.ndim() != 3)
        throw DimensionError("discriminator: expects C×H×W features");
    if (x.extent(1) < 32 || x.extent(2) < 32)
        throw DimensionError("discriminator: input " + shape_str(x.shape()) +
                             " too small for five stride-2 layers");
    Tensor y = x;
    for (std::size_t i = 0; i < layers_.size(); ++i) {
        y = layers_[i](y);
        if (i + 1 < layers_.size()) y = leaky_relu(y, slope_);
    }
    return sigmoid(y);
}

void Discriminator::collect_params(const std::string& prefix, NamedParams& out) const {
    for (std::size_t i = 0; i < layers_.size(); ++i)
        collect_conv(prefix + ".layer" + std::to_string(i), layers_[i], out);
}

Tensor gem(const Tensor& x, const Tensor& p) {
    if (x.ndim() != 3) throw DimensionError("gem: expects C×H×W");
    if (!p.defined() || p.size() != 1) throw ParameterError("gem: p must be scalar");
    if (p.value() < 1.0) throw ParameterError("gem: p must be >= 1");
    Tensor clamped = relu(x);
    Tensor powered = pow_elem(clamped, p);
    Tensor channel_means = mean_axes(powered, {1, 2});
    Tensor inv_p = pow_scalar(p, -1.0);
    return pow_elem(channel_means, inv_p);
}

Tensor gem(const Tensor& x, double p) { return gem(x, Tensor::scalar(p)); }

namespace {

Tensor pooled_scale(const Tensor& feats, const Tensor& M, const Tensor& p,
                    const MsGemOptions& opts) {
    Tensor weighted = M.defined() ? broadcast_mul(feats, M) : feats;
    if (opts.normalize_input) weighted = l2_normalize_per_channel(weighted);
    Tensor pooled = gem(weighted, p);
    if (opts.normalize_per_scale) pooled = l2_normalize_all(pooled);
    return pooled;
}

}  // namespace

Tensor ms_gem(const Tensor& f4, const Tensor& f5, const Tensor& M, const Tensor& p4,
              const Tensor& p5, const MsGemOptions& opts) {
    if (f4.ndim() != 3 || f5.ndim() != 3) throw DimensionError("ms_gem: expects C×H×W features");
    const int h4 = f4.extent(1), w4 = f4.extent(2);
    if (M.defined() && (M.extent(1) != h4 || M.extent(2) != w4))
        throw DimensionError("ms_gem: attention extents do not match f4");
    Tensor f5_up = upsample_nearest(f5, h4, w4);
    Tensor g4 = pooled_scale(f4, M, p4, opts);
    Tensor g5 = pooled_scale(f5_up, M, p5, opts);
    Tensor descriptor = concat({g4, g5}, 0);
    if (opts.normalize_final) descriptor = l2_normalize_all(descriptor);
    return descriptor;
}

VprModel::VprModel(const ModelConfig& cfg, std::uint64_t init_seed) : cfg_(cfg) {
    cfg_.encoder.validate();
    if (cfg_.p4 < 1.0 || cfg_.p5 < 1.0) throw ParameterError("model: GeM p must be >= 1");
    Rng rng(substream_seed(init_seed, "init"));
    encoder_ = Encoder(cfg_.encoder, rng);
    attention_ = AttentionModule(cfg_.encoder.c4, rng, cfg_.att_bank_stride);
    const int hidden = cfg_.decoder_hidden > 0 ? cfg_.decoder_hidden : cfg_.encoder.c4;
    decoder_ = SegDecoder(cfg_.encoder.c4, cfg_.num_classes, hidden, rng);
    discriminator_ = Discriminator(cfg_.num_classes, cfg_.discr_channels, rng);
    p4_ = Tensor::scalar(cfg_.p4, cfg_.trainable_p);
    p5_ = Tensor::scalar(cfg_.p5, cfg_.trainable_p);
}

ForwardBundle VprModel::forward_descriptor(const Tensor& image) const {
    ForwardBundle out;
    FeatureMaps maps = encoder_.forward(image);
    out.f4 = maps.f4;
    out.f5 = maps.f5;
    out.M = cfg_.ablation.att
                ? attention_.forward(maps.f4)
                : Tensor::ones({1, maps.f4.extent(1), maps.f4.extent(2)});
    if (cfg_.ablation.ms_gem) {
        out.descriptor = ms_gem(maps.f4, maps.f5, cfg_.ablation.att ? out.M : Tensor(),
                                p4_, p5_);
    } else if (cfg_.ablation.att) {
        Tensor f5_up = upsample_nearest(maps.f5, maps.f4.extent(1), maps.f4.extent(2));
        Tensor weighted = l2_normalize_per_channel(broadcast_mul(f5_up, out.M));
        out.descriptor = l2_normalize_all(gem(weighted, p5_));
    } else {
        // Baseline: shared encoder followed by GeM pooling on f5.
        out.descriptor = l2_normalize_all(gem(maps.f5, p5_));
    }
    return out;
}

Tensor VprModel::describe(const Tensor& image) const {
    return forward_descriptor(image).descriptor;
}

SegOutput VprModel::segment_from(const Tensor& f4, const Tensor& M) const {
    return decoder_.forward(f4, M, cfg_.ablation.g_semseg);
}

Tensor VprModel::discriminate(const Tensor& features) const {
    return discriminator_.forward(features);
}

int VprModel::descriptor_length() const {
    return cfg_.ablation.ms_gem ? cfg_.encoder.c4 + cfg_.encoder.c5 : cfg_.encoder.c5;
}

NamedParams VprModel::parameters() const {
    NamedParams out = main_parameters();
    discriminator_.collect_params("discr", out);
    if (!cfg_.trainable_p) {
        out.emplace_back("pool.p4", p4_);
        out.emplace_back("pool.p5", p5_);
    }
    std::sort(out.begin(), out.end(),
              [](const auto& a, const auto& b) { return a.first < b.first; });
    return out;
}

NamedParams VprModel::main_parameters() const {
    NamedParams out;
    encoder_.collect_params("encoder", out);
    attention_.collect_params("attention", out);
    decoder_.collect_params("decoder", out);
    if (cfg_.trainable_p) {
        out.emplace_back("pool.p4", p4_);
        out.emplace_back("pool.p5", p5_);
    }
    std::sort(out.begin(), out.end(),
              [](const auto& a, const auto& b) { return a.first < b.first; });
    return out;
}

NamedParams VprModel::discr_parameters() const {
    NamedParams out;
    discriminator_.collect_params("discr", out);
    std::sort(out.begin(), out.end(),
              [](const auto& a, const auto& b) { return a.first < b.first; });
    return out;
}

void VprModel::load_parameters(const NamedParams& named) {
    NamedParams own = parameters();
    if (named.size() != own.size())
        throw IoError("checkpoint has " + std::to_string(named.size()) +
                      " parameters, model expects " + std::to_string(own.size()));
    std::size_t i = 0;
    for (auto& [name, tensor] : own) {
        const auto& [in_name, in_tensor] = named[i++];
        if (in_name != name)
            throw IoError("checkpoint parameter '" + in_name + "' does not match model '" +
                          name + "'");
        if (in_tensor.shape() != tensor.shape())
            throw IoError("checkpoint parameter '" + name + "' has shape " +
                          shape_str(in_tensor.shape()) + ", model expects " +
                          shape_str(tensor.shape()));
        tensor.array() = in_tensor.array();
    }
}

}  // namespace vpr
