#pragma once

// ViT encoder, uniform patch masking, lightweight decoder, masked
// reconstruction loss, and the classification head.

#include <algorithm>
#include <cmath>
#include <map>
#include <numbers>
#include <sstream>
#include <string>
#include <vector>

#include "usfmae/errors.hpp"
#include "usfmae/rng.hpp"
#include "usfmae/tensor.hpp"

namespace usfmae {

struct ModelConfig {
    int image_size = 224;
    int patch_size = 16;
    int in_channels = 3;
    int encoder_dim = 768;
    int encoder_depth = 12;
    int encoder_heads = 12;
    int decoder_dim = 384;
    int decoder_depth = 2;
    int decoder_heads = 6;
    int mlp_ratio = 4;
    float mask_ratio = 0.25f;
    int num_classes = 5;
    int head_hidden = 0;     // 0 means encoder_dim
    bool mean_pool = false;  // class-token read-out by default

    int num_patches() const {
        const int g = image_size / patch_size;
        return g * g;
    }
    int patch_dim() const { return patch_size * patch_size * in_channels; }
    int head_hidden_dim() const { return head_hidden > 0 ? head_hidden : encoder_dim; }

    void validate() const {
        std::vector<std::string> bad;
        if (image_size <= 0 || patch_size <= 0 || image_size % patch_size != 0)
            bad.push_back("image_size must be a positive multiple of patch_size");
        if (in_channels != 1 && in_channels != 3) bad.push_back("in_channels must be 1 or 3");
        if (encoder_dim <= 0 || encoder_dim % encoder_heads != 0)
            bad.push_back("encoder_dim must be a positive multiple of encoder_heads");
        if (decoder_dim <= 0 || decoder_dim % decoder_heads != 0)
            bad.push_back("decoder_dim must be a positive multiple of decoder_heads");
        if (encoder_dim % 4 != 0 || decoder_dim % 4 != 0)
            bad.push_back("embedding dims must be multiples of 4 for 2-D sin-cos position tables");
        if (encoder_depth < 1) bad.push_back("encoder_depth must be >= 1");
        if (decoder_depth < 0) bad.push_back("decoder_depth must be >= 0");
        if (!(mask_ratio > 0.0f && mask_ratio < 1.0f)) bad.push_back("mask_ratio must be in (0,1)");
        if (num_classes < 2) bad.push_back("num_classes must be >= 2");
        if (mlp_ratio < 1) bad.push_back("mlp_ratio must be >= 1");
        if (!bad.empty()) {
            std::ostringstream os;
            os << "invalid model config:";
            for (const auto& b : bad) os << " " << b << ";";
            throw ConfigError(os.str());
        }
    }

    // "vitb" is the full-scale geometry, "tiny" the desk-scale one.
    // Lightweight decoder defaults: half the encoder width, depth 2.
    static ModelConfig preset(const std::string& name) {
        ModelConfig c;
        if (name == "vitb") {
            c.encoder_dim = 768;
            c.encoder_depth = 12;
            c.encoder_heads = 12;
        } else if (name == "tiny") {
            c.encoder_dim = 64;
            c.encoder_depth = 4;
            c.encoder_heads = 4;
        } else {
            throw ConfigError("unknown model preset '" + name + "' (expected vitb or tiny)");
        }
        c.decoder_dim = c.encoder_dim / 2;
        c.decoder_depth = 2;
        c.decoder_heads = std::max(1, c.encoder_heads / 2);
        return c;
    }
};

struct MaskPlan {
    std::vector<int> visible_indices;
    std::vector<int> masked_indices;

    static MaskPlan all_visible(int num_patches) {
        MaskPlan p;
        p.visible_indices.resize(num_patches);
        for (int i = 0; i < num_patches; ++i) p.visible_indices[i] = i;
        return p;
    }
};

inline MaskPlan sample_mask(int num_patches, float mask_ratio, Rng& rng) {
    if (!(mask_ratio > 0.0f && mask_ratio < 1.0f))
        throw ConfigError("mask_ratio " + std::to_string(mask_ratio) + " outside (0,1)");
    const int n_masked = static_cast<int>(std::floor(mask_ratio * num_patches));
    std::vector<int> perm = rng.permutation(num_patches);
    MaskPlan plan;
    plan.masked_indices.assign(perm.begin(), perm.begin() + n_masked);
    plan.visible_indices.assign(perm.begin() + n_masked, perm.end());
    std::sort(plan.masked_indices.begin(), plan.masked_indices.end());
    std::sort(plan.visible_indices.begin(), plan.visible_indices.end());
    return plan;
}

// image[c,H,W] -> patches[num_patches, patch_size^2 * c]
// patch (r,q) lands at row r*(W/ps)+q; channel-major, then row-major within patch
template <class Real>
Tensor<Real> patchify(const Tensor<Real>& image, int patch_size) {
    if (image.ndim() != 3) throw ConfigError("patchify expects [c,H,W], got " + shape_str(image.shape()));
    const int c = image.dim(0), H = image.dim(1), W = image.dim(2);
    if (H % patch_size != 0 || W % patch_size != 0)
        throw ConfigError("patchify: image " + std::to_string(H) + "x" + std::to_string(W) +
                          " not divisible by patch size " + std::to_string(patch_size));
    const int gh = H / patch_size, gw = W / patch_size;
    const int pd = patch_size * patch_size * c;
    std::vector<Real> out(static_cast<size_t>(gh) * gw * pd);
    const auto& src = image.data();
    for (int r = 0; r < gh; ++r)
        for (int q = 0; q < gw; ++q) {
            Real* dst = out.data() + static_cast<size_t>(r * gw + q) * pd;
            for (int ch = 0; ch < c; ++ch)
                for (int y = 0; y < patch_size; ++y)
                    for (int x = 0; x < patch_size; ++x)
                        *dst++ = src[(static_cast<size_t>(ch) * H + r * patch_size + y) * W + q * patch_size + x];
        }
    return Tensor<Real>::from_data({gh * gw, pd}, std::move(out));
}

template <class Real>
Tensor<Real> unpatchify(const Tensor<Real>& patches, int patch_size, int c, int H, int W) {
    const int gh = H / patch_size, gw = W / patch_size;
    const int pd = patch_size * patch_size * c;
    if (patches.ndim() != 2 || patches.rows() != gh * gw || patches.cols() != pd)
        throw ConfigError("unpatchify shape mismatch: " + shape_str(patches.shape()));
    std::vector<Real> out(static_cast<size_t>(c) * H * W);
    for (int r = 0; r < gh; ++r)
        for (int q = 0; q < gw; ++q) {
            const Real* src = patches.data().data() + static_cast<size_t>(r * gw + q) * pd;
            for (int ch = 0; ch < c; ++ch)
                for (int y = 0; y < patch_size; ++y)
                    for (int x = 0; x < patch_size; ++x)
                        out[(static_cast<size_t>(ch) * H + r * patch_size + y) * W + q * patch_size + x] = *src++;
        }
    return Tensor<Real>::from_data({c, H, W}, std::move(out));
}

// fixed 2-D sin-cos table; row 0 (class token slot) stays zero
template <class Real>
Tensor<Real> sincos_position_table(int grid, int dim) {
    const int quarter = dim / 4;
    std::vector<Real> out(static_cast<size_t>(grid * grid + 1) * dim, Real(0));
    for (int r = 0; r < grid; ++r)
        for (int q = 0; q < grid; ++q) {
            Real* row = out.data() + static_cast<size_t>(1 + r * grid + q) * dim;
            for (int i = 0; i < quarter; ++i) {
                const double omega = std::pow(10000.0, -static_cast<double>(i) / quarter);
                row[2 * i] = static_cast<Real>(std::sin(r * omega));
                row[2 * i + 1] = static_cast<Real>(std::cos(r * omega));
                row[dim / 2 + 2 * i] = static_cast<Real>(std::sin(q * omega));
                row[dim / 2 + 2 * i + 1] = static_cast<Real>(std::cos(q * omega));
            }
        }
    return Tensor<Real>::from_data({grid * grid + 1, dim}, std::move(out));
}

// Full parameter set, keyed by name in a stable order. Decoder parameter
// names share the "dec." prefix so fine-tuning can drop them wholesale.
template <class Real>
class VitMae {
public:
    ModelConfig config;

    VitMae() = default;

    const std::vector<std::string>& param_names() const { return names_; }
    Tensor<Real>& param(const std::string& name) {
        auto it = index_.find(name);
        if (it == index_.end()) throw ConfigError("unknown parameter '" + name + "'");
        return params_[it->second];
    }
    const Tensor<Real>& param(const std::string& name) const {
        auto it = index_.find(name);
        if (it == index_.end()) throw ConfigError("unknown parameter '" + name + "'");
        return params_[it->second];
    }
    bool has_param(const std::string& name) const { return index_.count(name) > 0; }

    size_t parameter_count() const {
        size_t n = 0;
        for (const auto& p : params_) n += p.numel();
        return n;
    }

    void add_param(const std::string& name, Tensor<Real> t) {
        t.set_requires_grad(true);
        index_[name] = names_.size();
        names_.push_back(name);
        params_.push_back(std::move(t));
    }

    void drop_params_with_prefix(const std::string& prefix) {
        std::vector<std::string> keep_names;
        std::vector<Tensor<Real>> keep_params;
        for (size_t i = 0; i < names_.size(); ++i) {
            if (names_[i].rfind(prefix, 0) == 0) continue;
            keep_names.push_back(names_[i]);
            keep_params.push_back(params_[i]);
        }
        names_ = std::move(keep_names);
        params_ = std::move(keep_params);
        index_.clear();
        for (size_t i = 0; i < names_.size(); ++i) index_[names_[i]] = i;
    }

    const Tensor<Real>& encoder_positions() const { return enc_pos_; }
    const Tensor<Real>& decoder_positions() const { return dec_pos_; }

    void rebuild_position_tables() {
        const int grid = config.image_size / config.patch_size;
        enc_pos_ = sincos_position_table<Real>(grid, config.encoder_dim);
        dec_pos_ = sincos_position_table<Real>(grid, config.decoder_dim);
    }

private:
    std::vector<std::string> names_;
    std::vector<Tensor<Real>> params_;
    std::map<std::string, size_t> index_;
    Tensor<Real> enc_pos_;  // fixed, not trained
    Tensor<Real> dec_pos_;
};

namespace detail {

template <class Real>
void init_linear(VitMae<Real>& m, const std::string& name, int in, int out, Rng& rng) {
    std::vector<Real> w(static_cast<size_t>(in) * out);
    for (auto& v : w) v = static_cast<Real>(rng.trunc_normal(0.02));
    m.add_param(name + ".weight", Tensor<Real>::from_data({in, out}, std::move(w)));
    m.add_param(name + ".bias", Tensor<Real>::zeros({out}));
}

template <class Real>
void init_block(VitMae<Real>& m, const std::string& prefix, int dim, int mlp_ratio, Rng& rng) {
    m.add_param(prefix + ".ln1.gain", Tensor<Real>::filled({dim}, Real(1)));
    m.add_param(prefix + ".ln1.bias", Tensor<Real>::zeros({dim}));
    init_linear(m, prefix + ".attn.q", dim, dim, rng);
    init_linear(m, prefix + ".attn.k", dim, dim, rng);
    init_linear(m, prefix + ".attn.v", dim, dim, rng);
    init_linear(m, prefix + ".attn.out", dim, dim, rng);
    m.add_param(prefix + ".ln2.gain", Tensor<Real>::filled({dim}, Real(1)));
    m.add_param(prefix + ".ln2.bias", Tensor<Real>::zeros({dim}));
    init_linear(m, prefix + ".mlp.fc1", dim, dim * mlp_ratio, rng);
    init_linear(m, prefix + ".mlp.fc2", dim * mlp_ratio, dim, rng);
}

}  // namespace detail

template <class Real>
VitMae<Real> init_parameters(const ModelConfig& config, Rng& rng) {
    config.validate();
    VitMae<Real> m;
    m.config = config;
    detail::init_linear(m, "patch_embed", config.patch_dim(), config.encoder_dim, rng);
    {
        std::vector<Real> cls(config.encoder_dim);
        for (auto& v : cls) v = static_cast<Real>(rng.trunc_normal(0.02));
        m.add_param("cls_token", Tensor<Real>::from_data({1, config.encoder_dim}, std::move(cls)));
    }
    for (int b = 0; b < config.encoder_depth; ++b)
        detail::init_block(m, "enc." + std::to_string(b), config.encoder_dim, config.mlp_ratio, rng);
    m.add_param("enc_norm.gain", Tensor<Real>::filled({config.encoder_dim}, Real(1)));
    m.add_param("enc_norm.bias", Tensor<Real>::zeros({config.encoder_dim}));

    detail::init_linear(m, "dec.embed", config.encoder_dim, config.decoder_dim, rng);
    {
        std::vector<Real> mt(config.decoder_dim);
        for (auto& v : mt) v = static_cast<Real>(rng.trunc_normal(0.02));
        m.add_param("dec.mask_token", Tensor<Real>::from_data({1, config.decoder_dim}, std::move(mt)));
    }
    for (int b = 0; b < config.decoder_depth; ++b)
        detail::init_block(m, "dec." + std::to_string(b), config.decoder_dim, config.mlp_ratio, rng);
    m.add_param("dec.norm.gain", Tensor<Real>::filled({config.decoder_dim}, Real(1)));
    m.add_param("dec.norm.bias", Tensor<Real>::zeros({config.decoder_dim}));
    detail::init_linear(m, "dec.pred", config.decoder_dim, config.patch_dim(), rng);

    detail::init_linear(m, "head.fc1", config.encoder_dim, config.head_hidden_dim(), rng);
    detail::init_linear(m, "head.fc2", config.head_hidden_dim(), config.num_classes, rng);

    m.rebuild_position_tables();
    return m;
}

namespace detail {

template <class Real>
Tensor<Real> linear(const VitMae<Real>& m, const std::string& name, const Tensor<Real>& x) {
    return add_rowvec(matmul(x, m.param(name + ".weight")), m.param(name + ".bias"));
}

template <class Real>
Tensor<Real> attention(const VitMae<Real>& m, const std::string& prefix, const Tensor<Real>& x, int heads) {
    const int dim = x.cols();
    const int hd = dim / heads;
    const Real scl = Real(1) / std::sqrt(static_cast<Real>(hd));
    Tensor<Real> q = linear(m, prefix + ".q", x);
    Tensor<Real> k = linear(m, prefix + ".k", x);
    Tensor<Real> v = linear(m, prefix + ".v", x);
    std::vector<Tensor<Real>> head_outs;
    head_outs.reserve(heads);
    for (int h = 0; h < heads; ++h) {
        Tensor<Real> qh = slice_cols(q, h * hd, hd);
        Tensor<Real> kh = slice_cols(k, h * hd, hd);
        Tensor<Real> vh = slice_cols(v, h * hd, hd);
        Tensor<Real> w = softmax_rows(scale(matmul(qh, transpose(kh)), scl));
        head_outs.push_back(matmul(w, vh));
    }
    return linear(m, prefix + ".out", concat_cols(head_outs));
}

// pre-norm residual transformer block
template <class Real>
Tensor<Real> block(const VitMae<Real>& m, const std::string& prefix, Tensor<Real> x, int heads) {
    x = add(x, attention(m, prefix + ".attn", layernorm_rows(x, m.param(prefix + ".ln1.gain"), m.param(prefix + ".ln1.bias")), heads));
    Tensor<Real> h = layernorm_rows(x, m.param(prefix + ".ln2.gain"), m.param(prefix + ".ln2.bias"));
    h = linear(m, prefix + ".mlp.fc2", gelu(linear(m, prefix + ".mlp.fc1", h)));
    return add(x, h);
}

}  // namespace detail

// patches -> [|visible|+1, encoder_dim]; positions indexed by original
// patch location, class token in front
template <class Real>
Tensor<Real> encode(const VitMae<Real>& m, const Tensor<Real>& patches, const MaskPlan& plan) {
    const ModelConfig& cfg = m.config;
    if (patches.ndim() != 2 || patches.rows() != cfg.num_patches() || patches.cols() != cfg.patch_dim())
        throw ConfigError("encode: patches shape " + shape_str(patches.shape()) + " does not match config (" +
                          std::to_string(cfg.num_patches()) + "x" + std::to_string(cfg.patch_dim()) + ")");
    for (int i : plan.visible_indices)
        if (i < 0 || i >= cfg.num_patches()) throw ConfigError("encode: visible index out of range");

    Tensor<Real> vis = index_select_rows(patches, plan.visible_indices);
    Tensor<Real> emb = detail::linear(m, "patch_embed", vis);
    std::vector<int> pos_rows{0};  // class-token slot
    for (int i : plan.visible_indices) pos_rows.push_back(i + 1);
    Tensor<Real> x = concat_rows<Real>({m.param("cls_token"), emb});
    x = add(x, index_select_rows(m.encoder_positions(), pos_rows));
    for (int b = 0; b < cfg.encoder_depth; ++b)
        x = detail::block(m, "enc." + std::to_string(b), x, cfg.encoder_heads);
    return layernorm_rows(x, m.param("enc_norm.gain"), m.param("enc_norm.bias"));
}

// encoded tokens -> pixel predictions for every patch position
template <class Real>
Tensor<Real> decode_reconstruct(const VitMae<Real>& m, const Tensor<Real>& encoded, const MaskPlan& plan) {
    const ModelConfig& cfg = m.config;
    const int n_vis = static_cast<int>(plan.visible_indices.size());
    if (encoded.ndim() != 2 || encoded.rows() != n_vis + 1 || encoded.cols() != cfg.encoder_dim)
        throw ConfigError("decode_reconstruct: encoded shape " + shape_str(encoded.shape()) +
                          " inconsistent with plan (" + std::to_string(n_vis + 1) + " tokens expected)");
    Tensor<Real> proj = detail::linear(m, "dec.embed", encoded);

    // full-length sequence: class token, then one token per patch position;
    // masked positions pull the shared mask token (gradients accumulate there)
    std::vector<int> src(static_cast<size_t>(cfg.num_patches()) + 1, n_vis + 1);
    src[0] = 0;
    for (int j = 0; j < n_vis; ++j) src[static_cast<size_t>(plan.visible_indices[j]) + 1] = j + 1;
    Tensor<Real> ext = concat_rows<Real>({proj, m.param("dec.mask_token")});
    Tensor<Real> x = index_select_rows(ext, src);
    std::vector<int> pos_rows(static_cast<size_t>(cfg.num_patches()) + 1);
    for (size_t i = 0; i < pos_rows.size(); ++i) pos_rows[i] = static_cast<int>(i);
    x = add(x, index_select_rows(m.decoder_positions(), pos_rows));
    for (int b = 0; b < cfg.decoder_depth; ++b)
        x = detail::block(m, "dec." + std::to_string(b), x, cfg.decoder_heads);
    // zero-depth decoder degenerates to a pure affine map; the trailing norm
    // belongs to the block stack and is skipped with it
    if (cfg.decoder_depth > 0)
        x = layernorm_rows(x, m.param("dec.norm.gain"), m.param("dec.norm.bias"));
    x = slice_rows(x, 1, cfg.num_patches());  // drop class token
    return detail::linear(m, "dec.pred", x);
}

// mean squared error over masked-patch pixels only
template <class Real>
Tensor<Real> mae_loss(const Tensor<Real>& pred, const Tensor<Real>& target_patches, const MaskPlan& plan) {
    if (pred.shape() != target_patches.shape())
        throw ConfigError("mae_loss shape mismatch: " + shape_str(pred.shape()) + " vs " +
                          shape_str(target_patches.shape()));
    if (plan.masked_indices.empty()) throw ConfigError("mae_loss: empty masked set, loss undefined");
    Tensor<Real> diff = sub(index_select_rows(pred, plan.masked_indices),
                            index_select_rows(target_patches, plan.masked_indices));
    return mean(mul(diff, diff));
}

// full-visibility encode, then the MLP head on the pooled representation
template <class Real>
Tensor<Real> classify(const VitMae<Real>& m, const Tensor<Real>& patches) {
    const ModelConfig& cfg = m.config;
    Tensor<Real> enc = encode(m, patches, MaskPlan::all_visible(cfg.num_patches()));
    Tensor<Real> pooled = cfg.mean_pool ? mean_rows(slice_rows(enc, 1, cfg.num_patches())) : slice_rows(enc, 0, 1);
    Tensor<Real> h = gelu(detail::linear(m, "head.fc1", pooled));
    Tensor<Real> logits = detail::linear(m, "head.fc2", h);
    return reshape(logits, {cfg.num_classes});
}

}  // namespace usfmae
