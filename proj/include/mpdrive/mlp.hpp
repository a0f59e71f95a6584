#pragma once
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "mpdrive/mat.hpp"
#include "mpdrive/rng.hpp"

namespace mpdrive {

enum class Mode { train, eval };
enum class OutputActivation { linear, tanh };

// Batch-norm epsilon inside the normalizing square root.
inline constexpr double kBnEpsilon = 1e-5;
// Running-statistics momentum: running = m * running + (1 - m) * batch.
inline constexpr double kBnMomentum = 0.99;

// Architecture of a fully connected net: layer_sizes holds input width,
// hidden widths, output width. Hidden layers use ReLU; batch norm, when
// enabled for a hidden layer, is applied between the affine map and the
// ReLU. The output layer is linear or tanh and never batch-normalized.
struct MlpSpec {
    std::vector<int> layer_sizes;
    OutputActivation output_activation = OutputActivation::linear;
    std::vector<std::uint8_t> batch_norm; // one flag per hidden layer; empty = all off

    int num_layers() const { return static_cast<int>(layer_sizes.size()) - 1; }
    int num_hidden() const { return num_layers() - 1; }
    int input_size() const { return layer_sizes.front(); }
    int output_size() const { return layer_sizes.back(); }

    bool bn_at(int hidden_layer) const {
        return hidden_layer < static_cast<int>(batch_norm.size()) &&
               batch_norm[hidden_layer] != 0;
    }
    bool any_bn() const {
        for (auto f : batch_norm)
            if (f) return true;
        return false;
    }

    // Throws ContractViolation on an unusable spec. A zero-width output is
    // accepted so a growable head can start empty.
    void validate() const;

    std::int64_t param_count() const; // trainable + running statistics

    bool operator==(const MlpSpec&) const = default;
};

struct BatchNormParams {
    std::vector<double> gamma, beta;             // trainable
    std::vector<double> running_mean, running_var; // updated by training code
    bool empty() const { return gamma.empty(); }
};

struct MlpParams {
    std::vector<Mat> w;                  // w[l]: layer_sizes[l+1] x layer_sizes[l]
    std::vector<std::vector<double>> b;  // b[l]: layer_sizes[l+1]
    std::vector<BatchNormParams> bn;     // one per hidden layer; unused entries empty
};

// Zero-filled parameters with the shapes the spec demands (batch-norm
// gamma = 1, running_var = 1 so the identity transform holds).
MlpParams make_params(const MlpSpec& spec);

// Uniform init in [-1/sqrt(fan_in), +1/sqrt(fan_in)] for each layer's
// weights and biases; final_layer_range overrides the last layer's bound.
MlpParams init_params(const MlpSpec& spec, Rng& rng,
                      std::optional<double> final_layer_range = std::nullopt);

struct LayerCache {
    Mat in;      // input to the affine map
    Mat act_in;  // pre-activation (post batch norm when present)
    Mat bn_z;    // affine output fed to batch norm (bn layers only)
    Mat bn_xhat; // normalized values (bn layers only)
    std::vector<double> bn_mean, bn_var; // statistics used by this pass
};

struct ForwardCache {
    std::vector<LayerCache> layers;
    Mat output;
    Mode mode = Mode::eval;
};

// Pure function of (spec, params, inputs, mode). Train mode normalizes with
// batch statistics and requires at least two rows when any layer has batch
// norm; running statistics are only touched by update_running_stats.
Mat forward(const MlpSpec& spec, const MlpParams& params, const Mat& inputs, Mode mode,
            ForwardCache* cache = nullptr);

// Single-row eval-mode convenience.
std::vector<double> forward_one(const MlpSpec& spec, const MlpParams& params,
                                const std::vector<double>& input);

// Folds the batch statistics recorded in a train-mode cache into the
// running statistics.
void update_running_stats(const MlpSpec& spec, MlpParams& params, const ForwardCache& cache);

struct Gradients {
    MlpParams params; // same shapes as the net; running-stat slots stay zero
    Mat inputs;       // d<upstream, output>/d inputs
};

// Reverse-mode gradients of sum_batch <upstream_row, output_row> with
// respect to every trainable parameter and the inputs.
Gradients backward(const MlpSpec& spec, const MlpParams& params, const ForwardCache& cache,
                   const Mat& upstream);

// Convenience overload that runs the forward pass itself.
Gradients backward(const MlpSpec& spec, const MlpParams& params, const Mat& inputs,
                   const Mat& upstream, Mode mode = Mode::train);

struct AdamState {
    MlpParams m, v; // first/second moment accumulators, parameter-shaped
    std::int64_t t = 0;
    double lr = 1e-3;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
};

AdamState make_adam(const MlpSpec& spec, double lr);

// One bias-corrected Adam step over the trainable tensors (weights, biases,
// batch-norm gamma/beta). Running statistics are not optimizer state.
void adam_step(MlpParams& params, const MlpParams& grads, AdamState& state);

// target <- tau * online + (1 - tau) * target for every tensor, running
// batch-norm statistics included.
void soft_update(MlpParams& target, const MlpParams& online, double tau);

double global_norm(const MlpParams& grads);

// Scales gradients so the global norm does not exceed max_norm.
void clip_global_norm(MlpParams& grads, double max_norm);

// Binary weight format: magic "MLPW", format version u32, f64 count u64,
// then every tensor little-endian in layer order (weights row-major, bias,
// then gamma / beta / running_mean / running_var for batch-norm layers).
inline constexpr std::uint32_t kWeightFormatVersion = 1;

std::vector<unsigned char> serialize_params(const MlpSpec& spec, const MlpParams& params);
MlpParams deserialize_params(const MlpSpec& spec, const std::vector<unsigned char>& bytes,
                             const std::string& name);
void save_params(const std::string& path, const MlpSpec& spec, const MlpParams& params);
MlpParams load_params(const std::string& path, const MlpSpec& spec);

} // namespace mpdrive
