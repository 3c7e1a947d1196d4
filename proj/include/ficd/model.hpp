#pragma once

#include <functional>
#include <string>
#include <unordered_map>
#include <vector>

#include "ficd/graph.hpp"
#include "ficd/rng.hpp"
#include "ficd/volume.hpp"

namespace ficd {

// Ordered, named parameter set. Enumeration order is construction order and is
// the canonical order for optimizer state, checkpoints, and gradient checks.
class ParamStore {
public:
    int add(std::string name, ad::Tensor t);

    int count() const { return static_cast<int>(tensors_.size()); }
    const std::string& name(int i) const { return names_[static_cast<size_t>(i)]; }
    const ad::Tensor& tensor(int i) const { return tensors_[static_cast<size_t>(i)]; }
    ad::Tensor& tensor(int i) { return tensors_[static_cast<size_t>(i)]; }
    const ad::Tensor& tensor(const std::string& name) const { return tensors_[static_cast<size_t>(index(name))]; }

    int index(const std::string& name) const;
    bool has(const std::string& name) const { return lookup_.count(name) > 0; }
    int64_t total_numel() const;
    bool all_finite() const;

private:
    std::vector<std::string> names_;
    std::vector<ad::Tensor> tensors_;
    std::unordered_map<std::string, int> lookup_;
};

struct AttentionSpec {
    bool enabled = true;
    int heads = 2;
    int head_channels = 8;
};

// epsilon-prediction UNet: `levels` encoder stages with stride-2 convolutions
// between them, mirrored decoder with skip concatenation, residual blocks with
// group norm + timestep embedding, self-attention at the deepest level.
struct DenoiserSpec {
    int in_channels = 2;  // noisy target concatenated with the condition
    int out_channels = 1;
    std::vector<int> base_channels = {8, 16, 32};  // per level, strictly increasing
    int blocks_per_level = 2;
    int time_embed_dim = 16;
    AttentionSpec attention;

    int levels() const { return static_cast<int>(base_channels.size()); }
    int spatial_divisor() const { return 1 << (levels() - 1); }
    void validate() const;
    bool operator==(const DenoiserSpec&) const = default;
};

// Sinusoidal features [sin(t/10000^(2i/dim)), ..., cos(t/10000^(2i/dim)), ...].
std::vector<double> timestep_embedding(int t, int dim);

// Fan-in-scaled uniform init, deterministic per seed; the output convolution is
// zero-initialized so an untrained net predicts zero noise.
ParamStore init_params(const DenoiserSpec& spec, uint64_t seed);

// Leaves for every parameter, in store order, for use with unet_forward.
std::vector<ad::Value> bind_params(ad::Graph& g, const ParamStore& store, bool requires_grad);

// Forward pass on an already-concatenated input (1, in_channels, D, H, W).
ad::Value unet_forward(ad::Graph& g, const DenoiserSpec& spec, const ParamStore& store,
                       const std::vector<ad::Value>& leaves, ad::Value x_in, int t);

// Volume-level prediction: concatenates (x_t, condition) and runs the net.
Volume3 predict_noise(const ParamStore& params, const DenoiserSpec& spec, const Volume3& x_t,
                      const Volume3& condition, int t);

// Denoiser closure over fixed parameters.
std::function<Volume3(const Volume3&, const Volume3&, int)> make_denoiser(const ParamStore& params,
                                                                          const DenoiserSpec& spec);

// Test double: ignores all inputs and returns the stored noise.
std::function<Volume3(const Volume3&, const Volume3&, int)> oracle_denoiser(Volume3 stored_eps);

// Volume <-> tensor bridging; volumes become (1, 1, nz, ny, nx) tensors with
// the payload copied verbatim (x remains the fastest axis).
ad::Tensor volume_to_tensor(const Volume3& v);
Volume3 tensor_to_volume(const ad::Tensor& t, const Volume3& like, RangeTag tag = RangeTag::Raw);

}  // namespace ficd
