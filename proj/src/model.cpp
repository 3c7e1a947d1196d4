#include "ficd/model.hpp"

#include <cmath>

#include "ficd/errors.hpp"

namespace ficd {

using ad::Graph;
using ad::Shape;
using ad::Tensor;
using ad::Value;

// ---------------------------------------------------------------------------
// ParamStore
// ---------------------------------------------------------------------------

int ParamStore::add(std::string name, Tensor t) {
    if (lookup_.count(name)) throw ConfigError("duplicate parameter name: " + name);
    const int idx = count();
    lookup_.emplace(name, idx);
    names_.push_back(std::move(name));
    tensors_.push_back(std::move(t));
    return idx;
}

int ParamStore::index(const std::string& name) const {
    auto it = lookup_.find(name);
    if (it == lookup_.end()) throw ConfigError("unknown parameter name: " + name);
    return it->second;
}

int64_t ParamStore::total_numel() const {
    int64_t n = 0;
    for (const auto& t : tensors_) n += t.numel();
    return n;
}

bool ParamStore::all_finite() const {
    for (const auto& t : tensors_)
        if (!t.all_finite()) return false;
    return true;
}

// ---------------------------------------------------------------------------
// Spec
// ---------------------------------------------------------------------------

void DenoiserSpec::validate() const {
    if (in_channels < 1 || out_channels < 1) throw ConfigError("denoiser channels must be positive");
    if (base_channels.empty()) throw ConfigError("denoiser needs at least one level");
    for (size_t i = 0; i < base_channels.size(); ++i) {
        if (base_channels[i] < 1) throw ConfigError("denoiser base_channels must be positive");
        if (i > 0 && base_channels[i] <= base_channels[i - 1])
            throw ConfigError("denoiser base_channels must be strictly increasing");
    }
    if (blocks_per_level < 1) throw ConfigError("blocks_per_level must be >= 1");
    if (time_embed_dim < 2 || time_embed_dim % 2 != 0)
        throw ConfigError("time_embed_dim must be even and >= 2");
    if (attention.enabled && (attention.heads < 1 || attention.head_channels < 1))
        throw ConfigError("attention heads/head_channels must be positive");
}

std::vector<double> timestep_embedding(int t, int dim) {
    if (dim < 2 || dim % 2 != 0) throw ConfigError("timestep_embedding: dim must be even");
    const int half = dim / 2;
    std::vector<double> out(static_cast<size_t>(dim));
    for (int i = 0; i < half; ++i) {
        const double freq = std::pow(10000.0, -2.0 * static_cast<double>(i) / static_cast<double>(dim));
        const double angle = static_cast<double>(t) * freq;
        out[static_cast<size_t>(i)] = std::sin(angle);
        out[static_cast<size_t>(half + i)] = std::cos(angle);
    }
    return out;
}

// ---------------------------------------------------------------------------
// Initialization
// ---------------------------------------------------------------------------

namespace {

int gn_groups(int channels) { return std::min(8, channels); }

Tensor fanin_uniform(Shape shape, int64_t fan_in, Rng& rng) {
    const double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
    return Tensor::uniform(std::move(shape), rng, -bound, bound);
}

void add_conv(ParamStore& p, const std::string& prefix, int64_t oc, int64_t ic, int64_t k,
              Rng& rng, bool zero = false) {
    Shape ws{oc, ic, k, k, k};
    p.add(prefix + ".w", zero ? Tensor::zeros(ws) : fanin_uniform(ws, ic * k * k * k, rng));
    p.add(prefix + ".b", Tensor::zeros({oc}));
}

void add_tconv(ParamStore& p, const std::string& prefix, int64_t ic, int64_t oc, int64_t k,
               Rng& rng) {
    Shape ws{ic, oc, k, k, k};
    p.add(prefix + ".w", fanin_uniform(ws, ic * k * k * k, rng));
    p.add(prefix + ".b", Tensor::zeros({oc}));
}

void add_linear(ParamStore& p, const std::string& prefix, int64_t in, int64_t out, Rng& rng) {
    p.add(prefix + ".w", fanin_uniform({in, out}, in, rng));
    p.add(prefix + ".b", Tensor::zeros({out}));
}

void add_norm(ParamStore& p, const std::string& prefix, int64_t c) {
    p.add(prefix + ".g", Tensor::full({c}, 1.0));
    p.add(prefix + ".b", Tensor::zeros({c}));
}

void add_resblock(ParamStore& p, const std::string& prefix, int in_ch, int out_ch, int temb,
                  Rng& rng) {
    add_norm(p, prefix + ".gn1", in_ch);
    add_conv(p, prefix + ".conv1", out_ch, in_ch, 3, rng);
    add_linear(p, prefix + ".temb", temb, out_ch, rng);
    add_norm(p, prefix + ".gn2", out_ch);
    add_conv(p, prefix + ".conv2", out_ch, out_ch, 3, rng);
    if (in_ch != out_ch) add_conv(p, prefix + ".short", out_ch, in_ch, 1, rng);
}

}  // namespace

ParamStore init_params(const DenoiserSpec& spec, uint64_t seed) {
    spec.validate();
    Rng rng(seed);
    ParamStore p;
    const int levels = spec.levels();
    const auto& ch = spec.base_channels;
    const int temb = spec.time_embed_dim;

    add_linear(p, "time.lin1", temb, temb, rng);
    add_linear(p, "time.lin2", temb, temb, rng);
    add_conv(p, "stem", ch[0], spec.in_channels, 3, rng);

    for (int i = 0; i < levels; ++i) {
        for (int j = 0; j < spec.blocks_per_level; ++j)
            add_resblock(p, "enc" + std::to_string(i) + ".res" + std::to_string(j), ch[static_cast<size_t>(i)],
                         ch[static_cast<size_t>(i)], temb, rng);
        if (i + 1 < levels)
            add_conv(p, "down" + std::to_string(i), ch[static_cast<size_t>(i + 1)], ch[static_cast<size_t>(i)], 3,
                     rng);
    }

    if (spec.attention.enabled) {
        const int inner = spec.attention.heads * spec.attention.head_channels;
        const int deep = ch.back();
        add_norm(p, "attn.gn", deep);
        add_conv(p, "attn.q", inner, deep, 1, rng);
        add_conv(p, "attn.k", inner, deep, 1, rng);
        add_conv(p, "attn.v", inner, deep, 1, rng);
        add_conv(p, "attn.proj", deep, inner, 1, rng);
    }

    for (int i = levels - 1; i >= 0; --i) {
        for (int j = 0; j < spec.blocks_per_level; ++j) {
            const int in_ch = j == 0 ? 2 * ch[static_cast<size_t>(i)] : ch[static_cast<size_t>(i)];
            add_resblock(p, "dec" + std::to_string(i) + ".res" + std::to_string(j), in_ch,
                         ch[static_cast<size_t>(i)], temb, rng);
        }
        if (i > 0)
            add_tconv(p, "up" + std::to_string(i), ch[static_cast<size_t>(i)], ch[static_cast<size_t>(i - 1)], 2,
                      rng);
    }

    add_norm(p, "head.gn", ch[0]);
    add_conv(p, "head.conv", spec.out_channels, ch[0], 3, rng, /*zero=*/true);
    return p;
}

// ---------------------------------------------------------------------------
// Forward graph
// ---------------------------------------------------------------------------

std::vector<Value> bind_params(Graph& g, const ParamStore& store, bool requires_grad) {
    std::vector<Value> leaves;
    leaves.reserve(static_cast<size_t>(store.count()));
    for (int i = 0; i < store.count(); ++i) {
        Tensor t = store.tensor(i);
        t.requires_grad = requires_grad;
        leaves.push_back(g.leaf(std::move(t)));
    }
    return leaves;
}

namespace {

struct Binder {
    Graph& g;
    const ParamStore& store;
    const std::vector<Value>& leaves;
    Value operator()(const std::string& name) const {
        return leaves[static_cast<size_t>(store.index(name))];
    }
};

Value conv_block(Graph& g, const Binder& p, const std::string& prefix, Value x, int stride,
                 int padding) {
    Value h = g.conv3d(x, p(prefix + ".w"), stride, padding);
    return g.channel_bias(h, p(prefix + ".b"));
}

Value resblock(Graph& g, const Binder& p, const std::string& prefix, Value x, Value temb,
               int in_ch, int out_ch) {
    Value h = g.group_norm(x, p(prefix + ".gn1.g"), p(prefix + ".gn1.b"), gn_groups(in_ch));
    h = g.silu(h);
    h = conv_block(g, p, prefix + ".conv1", h, 1, 1);
    Value tproj = g.linear(g.silu(temb), p(prefix + ".temb.w"), p(prefix + ".temb.b"));
    h = g.channel_bias(h, g.reshape(tproj, {static_cast<int64_t>(out_ch)}));
    h = g.group_norm(h, p(prefix + ".gn2.g"), p(prefix + ".gn2.b"), gn_groups(out_ch));
    h = g.silu(h);
    h = conv_block(g, p, prefix + ".conv2", h, 1, 1);
    Value shortcut = in_ch == out_ch ? x : conv_block(g, p, prefix + ".short", x, 1, 0);
    return g.add(h, shortcut);
}

Value attention(Graph& g, const Binder& p, const DenoiserSpec& spec, Value x) {
    const Shape& s = g.shape(x);
    const int64_t c = s[1], d = s[2], hh = s[3], w = s[4];
    const int64_t heads = spec.attention.heads, hc = spec.attention.head_channels;
    const int64_t v_n = d * hh * w;
    Value a = g.group_norm(x, p("attn.gn.g"), p("attn.gn.b"), gn_groups(static_cast<int>(c)));
    Value q = conv_block(g, p, "attn.q", a, 1, 0);
    Value k = conv_block(g, p, "attn.k", a, 1, 0);
    Value v = conv_block(g, p, "attn.v", a, 1, 0);
    q = g.permute(g.reshape(q, {heads, hc, v_n}), {0, 2, 1});  // (heads, V, hc)
    k = g.reshape(k, {heads, hc, v_n});                         // (heads, hc, V)
    v = g.permute(g.reshape(v, {heads, hc, v_n}), {0, 2, 1});
    Value scores = g.scale(g.bmm(q, k), 1.0 / std::sqrt(static_cast<double>(hc)));
    Value attnw = g.softmax_lastdim(scores);
    Value o = g.bmm(attnw, v);                                  // (heads, V, hc)
    o = g.reshape(g.permute(o, {0, 2, 1}), {int64_t{1}, heads * hc, d, hh, w});
    o = conv_block(g, p, "attn.proj", o, 1, 0);
    return g.add(x, o);
}

}  // namespace

Value unet_forward(Graph& g, const DenoiserSpec& spec, const ParamStore& store,
                   const std::vector<Value>& leaves, Value x_in, int t) {
    spec.validate();
    const Shape& s = g.shape(x_in);
    if (s.size() != 5 || s[0] != 1 || s[1] != spec.in_channels)
        throw ShapeError("unet_forward: expected input (1," + std::to_string(spec.in_channels) +
                         ",D,H,W), got " + ad::shape_str(s));
    const int div = spec.spatial_divisor();
    for (int axis = 2; axis < 5; ++axis) {
        if (s[static_cast<size_t>(axis)] % div != 0)
            throw ShapeError("unet_forward: spatial dims must be divisible by " +
                             std::to_string(div) + ", got " + ad::shape_str(s));
    }
    if (t < 1) throw ConfigError("unet_forward: timestep must be >= 1");

    Binder p{g, store, leaves};
    const auto& ch = spec.base_channels;
    const int levels = spec.levels();

    Value temb = g.constant(Tensor({int64_t{1}, spec.time_embed_dim},
                                   timestep_embedding(t, spec.time_embed_dim)));
    temb = g.linear(temb, p("time.lin1.w"), p("time.lin1.b"));
    temb = g.linear(g.silu(temb), p("time.lin2.w"), p("time.lin2.b"));

    Value h = conv_block(g, p, "stem", x_in, 1, 1);
    std::vector<Value> skips;
    for (int i = 0; i < levels; ++i) {
        for (int j = 0; j < spec.blocks_per_level; ++j)
            h = resblock(g, p, "enc" + std::to_string(i) + ".res" + std::to_string(j), h, temb,
                         ch[static_cast<size_t>(i)], ch[static_cast<size_t>(i)]);
        if (i == levels - 1 && spec.attention.enabled) h = attention(g, p, spec, h);
        skips.push_back(h);
        if (i + 1 < levels) h = conv_block(g, p, "down" + std::to_string(i), h, 2, 1);
    }

    for (int i = levels - 1; i >= 0; --i) {
        h = g.concat_channels(h, skips[static_cast<size_t>(i)]);
        for (int j = 0; j < spec.blocks_per_level; ++j) {
            const int in_ch = j == 0 ? 2 * ch[static_cast<size_t>(i)] : ch[static_cast<size_t>(i)];
            h = resblock(g, p, "dec" + std::to_string(i) + ".res" + std::to_string(j), h, temb,
                         in_ch, ch[static_cast<size_t>(i)]);
        }
        if (i > 0) {
            h = g.conv_transpose3d(h, p("up" + std::to_string(i) + ".w"), 2, 0);
            h = g.channel_bias(h, p("up" + std::to_string(i) + ".b"));
        }
    }

    h = g.group_norm(h, p("head.gn.g"), p("head.gn.b"), gn_groups(ch[0]));
    h = g.silu(h);
    return conv_block(g, p, "head.conv", h, 1, 1);
}

// ---------------------------------------------------------------------------
// Volume-level prediction
// ---------------------------------------------------------------------------

ad::Tensor volume_to_tensor(const Volume3& v) {
    return Tensor({1, 1, v.dims().nz, v.dims().ny, v.dims().nx},
                  std::vector<double>(v.voxels()));
}

Volume3 tensor_to_volume(const Tensor& t, const Volume3& like, RangeTag tag) {
    if (t.numel() != like.count())
        throw ShapeError("tensor_to_volume: element count mismatch (" + std::to_string(t.numel()) +
                         " vs " + std::to_string(like.count()) + ")");
    auto d = t.data();
    return Volume3(like.dims(), std::vector<double>(d.begin(), d.end()), tag, like.stored_min(),
                   like.stored_max());
}

Volume3 predict_noise(const ParamStore& params, const DenoiserSpec& spec, const Volume3& x_t,
                      const Volume3& condition, int t) {
    if (!(x_t.dims() == condition.dims()))
        throw ShapeError("predict_noise: x_t dims " + dims_str(x_t.dims()) +
                         " != condition dims " + dims_str(condition.dims()));
    Graph g;
    auto leaves = bind_params(g, params, /*requires_grad=*/false);
    Value x = g.constant(volume_to_tensor(x_t));
    Value c = g.constant(volume_to_tensor(condition));
    Value out = unet_forward(g, spec, params, leaves, g.concat_channels(x, c), t);
    return tensor_to_volume(g.value(out), x_t, RangeTag::Raw);
}

std::function<Volume3(const Volume3&, const Volume3&, int)> make_denoiser(const ParamStore& params,
                                                                          const DenoiserSpec& spec) {
    return [params, spec](const Volume3& x_t, const Volume3& condition, int t) {
        return predict_noise(params, spec, x_t, condition, t);
    };
}

std::function<Volume3(const Volume3&, const Volume3&, int)> oracle_denoiser(Volume3 stored_eps) {
    return [stored = std::move(stored_eps)](const Volume3& x_t, const Volume3&, int) {
        if (!(x_t.dims() == stored.dims()))
            throw ShapeError("oracle_denoiser: stored noise dims " + dims_str(stored.dims()) +
                             " != input dims " + dims_str(x_t.dims()));
        return stored;
    };
}

}  // namespace ficd
