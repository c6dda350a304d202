#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "vpr/ops.hpp"
#include "vpr/rng.hpp"
#include "vpr/tensor.hpp"

namespace vpr {

using NamedParams = std::vector<std::pair<std::string, Tensor>>;

struct ConvLayer {
    Tensor w, b;
    int stride = 1;
    int pad = 0;
    Tensor operator()(const Tensor& x) const { return conv2d(x, w, b, stride, pad); }
};

// Toy stand-in for a pretrained backbone: a chain of strided conv+relu
// stages to f4 and one further stride-2 stage to f5, so that the f5 spatial
// extents are the f4 extents halved (floor).
struct EncoderConfig {
    int in_channels = 3;
    int c4 = 32;
    int c5 = 64;
    std::vector<int> stage_strides{2, 2, 2, 2};
    int kernel = 4;  // even, so strided stages halve extents with floor

    int total_stride() const;
    void validate() const;
};

struct FeatureMaps {
    Tensor f4, f5;
};

class Encoder {
public:
    Encoder() = default;
    Encoder(const EncoderConfig& cfg, Rng& rng);
    FeatureMaps forward(const Tensor& image) const;
    const EncoderConfig& config() const { return cfg_; }
    void collect_params(const std::string& prefix, NamedParams& out) const;

private:
    EncoderConfig cfg_;
    std::vector<ConvLayer> stages_;
    ConvLayer to_f5_;
};

// Three parallel filter banks (64 channels each, kernels 3/5/7), outputs
// upsampled to the f4 extents, concatenated, fused by a 1×1 filter and passed
// through softplus. The map M is strictly positive.
class AttentionModule {
public:
    AttentionModule() = default;
    AttentionModule(int c4, Rng& rng, int bank_stride = 1);
    Tensor forward(const Tensor& f4) const;
    void collect_params(const std::string& prefix, NamedParams& out) const;

    static constexpr int kBankChannels = 64;

private:
    ConvLayer bank3_, bank5_, bank7_, fuse_;
};

// Segmentation decoder stand-in: three 3×3 conv+relu layers followed by a
// 1×1 classifier. When guided, the penultimate feature map is weighted per
// pixel by a detached copy of M before classification, so the segmentation
// loss never reaches the attention parameters.
struct SegOutput {
    Tensor logits;    // |C|×H×W
    Tensor features;  // penultimate decoder features f_d
};

class SegDecoder {
public:
    SegDecoder() = default;
    SegDecoder(int in_channels, int num_classes, int hidden, Rng& rng);
    SegOutput forward(const Tensor& f4, const Tensor& M, bool guided) const;
    int num_classes() const { return num_classes_; }
    void collect_params(const std::string& prefix, NamedParams& out) const;

private:
    std::vector<ConvLayer> body_;
    ConvLayer classifier_;
    int num_classes_ = 0;
};

// Five 4×4 stride-2 pad-1 conv layers; leaky-relu (slope 0.2) after layers
// 1-4, sigmoid after the last. Emits a per-cell probability-of-source score.
class Discriminator {
public:
    Discriminator() = default;
    Discriminator(int in_channels, const std::array<int, 5>& channels, Rng& rng);
    Tensor forward(const Tensor& x) const;
    void collect_params(const std::string& prefix, NamedParams& out) const;

private:
    std::vector<ConvLayer> layers_;
    double slope_ = 0.2;
};

// Generalized-mean pooling, per channel: (mean over H×W of relu(x)^p)^(1/p).
// Differentiable in x and p; p must be >= 1.
Tensor gem(const Tensor& x, const Tensor& p);
Tensor gem(const Tensor& x, double p);

struct MsGemOptions {
    bool normalize_input = true;      // per-channel spatial L2 before pooling
    bool normalize_per_scale = true;  // per-scale vector L2
    bool normalize_final = true;      // unit-norm concatenated descriptor
};

// Multi-scale GeM: f5 is upsampled to the f4 extents, both scales are
// weighted by M, normalized, pooled, per-scale normalized, concatenated, and
// the concatenation normalized to unit norm. Pass an undefined M to skip the
// attention weighting.
Tensor ms_gem(const Tensor& f4, const Tensor& f5, const Tensor& M, const Tensor& p4,
              const Tensor& p5, const MsGemOptions& opts = {});

struct AblationFlags {
    bool ms_gem = true;
    bool att = true;
    bool semseg = true;
    bool g_semseg = true;
    bool da = true;
};

struct ModelConfig {
    EncoderConfig encoder;
    int att_bank_stride = 1;
    int num_classes = 17;
    int decoder_hidden = 0;  // 0 → same width as c4
    std::array<int, 5> discr_channels{64, 128, 256, 512, 1};
    double p4 = 3.0;
    double p5 = 3.0;
    bool trainable_p = false;
    AblationFlags ablation;
};

struct ForwardBundle {
    Tensor f4, f5;
    Tensor M;           // ones when attention is disabled
    Tensor descriptor;  // unit-norm embedding of length C4+C5 (C5 single-scale)
};

class VprModel {
public:
    VprModel(const ModelConfig& cfg, std::uint64_t init_seed);

    ForwardBundle forward_descriptor(const Tensor& image) const;
    Tensor describe(const Tensor& image) const;
    SegOutput segment_from(const Tensor& f4, const Tensor& M) const;
    Tensor discriminate(const Tensor& features) const;

    const ModelConfig& config() const { return cfg_; }
    int descriptor_length() const;

    NamedParams parameters() const;        // every persistent tensor, sorted by name
    NamedParams main_parameters() const;   // encoder + attention + decoder (+ p if trainable)
    NamedParams discr_parameters() const;  // discriminator only
    void load_parameters(const NamedParams& named);

    const Encoder& encoder() const { return encoder_; }
    const AttentionModule& attention() const { return attention_; }
    const SegDecoder& decoder() const { return decoder_; }
    const Discriminator& discriminator() const { return discriminator_; }
    Tensor p4_tensor() const { return p4_; }
    Tensor p5_tensor() const { return p5_; }

private:
    ModelConfig cfg_;
    Encoder encoder_;
    AttentionModule attention_;
    SegDecoder decoder_;
    Discriminator discriminator_;
    Tensor p4_, p5_;
};

// Initializers.
Tensor xavier_uniform(const Shape& shape, int fan_in, int fan_out, Rng& rng);
Tensor normal_init(const Shape& shape, double stddev, Rng& rng);

}  // namespace vpr
