#include "mpdrive/mlp.hpp"

#include <cmath>
#include <cstring>

#include "mpdrive/binio.hpp"

namespace mpdrive {

void MlpSpec::validate() const {
    if (layer_sizes.size() < 2)
        throw ContractViolation("MlpSpec: need at least input and output sizes");
    if (layer_sizes.front() < 1) throw ContractViolation("MlpSpec: input size must be >= 1");
    for (std::size_t i = 0; i + 1 < layer_sizes.size(); ++i)
        if (layer_sizes[i] < 1) throw ContractViolation("MlpSpec: layer sizes must be >= 1");
    if (layer_sizes.back() < 0) throw ContractViolation("MlpSpec: negative output size");
    if (!batch_norm.empty() && static_cast<int>(batch_norm.size()) != num_hidden())
        throw ContractViolation("MlpSpec: batch_norm flags must match hidden layer count");
}

std::int64_t MlpSpec::param_count() const {
    std::int64_t n = 0;
    for (int l = 0; l + 1 < static_cast<int>(layer_sizes.size()); ++l) {
        n += static_cast<std::int64_t>(layer_sizes[l + 1]) * layer_sizes[l] + layer_sizes[l + 1];
        if (l < num_hidden() && bn_at(l)) n += 4LL * layer_sizes[l + 1];
    }
    return n;
}

MlpParams make_params(const MlpSpec& spec) {
    spec.validate();
    MlpParams p;
    const int L = spec.num_layers();
    p.w.resize(L);
    p.b.resize(L);
    p.bn.resize(L > 0 ? L - 1 : 0);
    for (int l = 0; l < L; ++l) {
        const int in = spec.layer_sizes[l], out = spec.layer_sizes[l + 1];
        p.w[l] = Mat(out, in);
        p.b[l].assign(out, 0.0);
        if (l < spec.num_hidden() && spec.bn_at(l)) {
            p.bn[l].gamma.assign(out, 1.0);
            p.bn[l].beta.assign(out, 0.0);
            p.bn[l].running_mean.assign(out, 0.0);
            p.bn[l].running_var.assign(out, 1.0);
        }
    }
    return p;
}

MlpParams init_params(const MlpSpec& spec, Rng& rng, std::optional<double> final_layer_range) {
    MlpParams p = make_params(spec);
    const int L = spec.num_layers();
    for (int l = 0; l < L; ++l) {
        const int in = spec.layer_sizes[l];
        double bound = 1.0 / std::sqrt(static_cast<double>(in));
        if (l == L - 1 && final_layer_range) bound = *final_layer_range;
        for (auto& x : p.w[l].a) x = rng.uniform(-bound, bound);
        for (auto& x : p.b[l]) x = rng.uniform(-bound, bound);
    }
    return p;
}

namespace {

void check_params_shape(const MlpSpec& spec, const MlpParams& p, const char* who) {
    const int L = spec.num_layers();
    if (static_cast<int>(p.w.size()) != L || static_cast<int>(p.b.size()) != L)
        throw ContractViolation(std::string(who) + ": layer count mismatch");
    for (int l = 0; l < L; ++l) {
        if (p.w[l].rows != spec.layer_sizes[l + 1] || p.w[l].cols != spec.layer_sizes[l])
            throw ContractViolation(std::string(who) + ": weight shape mismatch");
        if (static_cast<int>(p.b[l].size()) != spec.layer_sizes[l + 1])
            throw ContractViolation(std::string(who) + ": bias shape mismatch");
        if (l < spec.num_hidden() && spec.bn_at(l)) {
            if (l >= static_cast<int>(p.bn.size()) ||
                static_cast<int>(p.bn[l].gamma.size()) != spec.layer_sizes[l + 1])
                throw ContractViolation(std::string(who) + ": batch-norm shape mismatch");
        }
    }
}

void relu_inplace(Mat& m) {
    for (auto& x : m.a)
        if (x < 0.0) x = 0.0;
}

} // namespace

Mat forward(const MlpSpec& spec, const MlpParams& params, const Mat& inputs, Mode mode,
            ForwardCache* cache) {
    spec.validate();
    check_params_shape(spec, params, "forward");
    if (inputs.cols != spec.input_size())
        throw ContractViolation("forward: input width mismatch");
    if (inputs.rows < 1) throw ContractViolation("forward: empty batch");
    if (mode == Mode::train && spec.any_bn() && inputs.rows < 2)
        throw InvalidBatch("forward: batch norm in train mode needs batch size >= 2");

    const int L = spec.num_layers();
    const int n = inputs.rows;
    if (cache) {
        cache->layers.assign(L, LayerCache{});
        cache->mode = mode;
    }

    Mat a = inputs;
    Mat z;
    for (int l = 0; l < L; ++l) {
        affine_forward(a, params.w[l], params.b[l], z);
        LayerCache* lc = cache ? &cache->layers[l] : nullptr;
        if (lc) lc->in = std::move(a);

        const bool hidden = l < L - 1;
        if (hidden && spec.bn_at(l)) {
            const int width = z.cols;
            const BatchNormParams& bn = params.bn[l];
            std::vector<double> mean(width), var(width);
            if (mode == Mode::train) {
                for (int j = 0; j < width; ++j) {
                    double s = 0.0;
                    for (int i = 0; i < n; ++i) s += z.at(i, j);
                    mean[j] = s / n;
                }
                for (int j = 0; j < width; ++j) {
                    double s = 0.0;
                    for (int i = 0; i < n; ++i) {
                        const double d = z.at(i, j) - mean[j];
                        s += d * d;
                    }
                    var[j] = s / n;
                }
            } else {
                mean = bn.running_mean;
                var = bn.running_var;
            }
            Mat xhat(n, width), y(n, width);
            for (int j = 0; j < width; ++j) {
                const double inv = 1.0 / std::sqrt(var[j] + kBnEpsilon);
                for (int i = 0; i < n; ++i) {
                    const double xh = (z.at(i, j) - mean[j]) * inv;
                    xhat.at(i, j) = xh;
                    y.at(i, j) = bn.gamma[j] * xh + bn.beta[j];
                }
            }
            if (lc) {
                lc->bn_z = std::move(z);
                lc->bn_xhat = xhat;
                lc->bn_mean = std::move(mean);
                lc->bn_var = std::move(var);
            }
            z = std::move(y);
        }

        if (lc) lc->act_in = z;
        if (hidden) {
            relu_inplace(z);
        } else if (spec.output_activation == OutputActivation::tanh) {
            for (auto& x : z.a) x = std::tanh(x);
        }
        a = std::move(z);
    }
    if (cache) cache->output = a;
    return a;
}

std::vector<double> forward_one(const MlpSpec& spec, const MlpParams& params,
                                const std::vector<double>& input) {
    Mat x(1, static_cast<int>(input.size()));
    x.a = input;
    Mat y = forward(spec, params, x, Mode::eval);
    return y.a;
}

void update_running_stats(const MlpSpec& spec, MlpParams& params, const ForwardCache& cache) {
    if (cache.mode != Mode::train)
        throw ContractViolation("update_running_stats: cache must come from a train pass");
    for (int l = 0; l < spec.num_hidden(); ++l) {
        if (!spec.bn_at(l)) continue;
        BatchNormParams& bn = params.bn[l];
        const LayerCache& lc = cache.layers[l];
        for (std::size_t j = 0; j < bn.running_mean.size(); ++j) {
            bn.running_mean[j] = kBnMomentum * bn.running_mean[j] + (1.0 - kBnMomentum) * lc.bn_mean[j];
            bn.running_var[j] = kBnMomentum * bn.running_var[j] + (1.0 - kBnMomentum) * lc.bn_var[j];
        }
    }
}

Gradients backward(const MlpSpec& spec, const MlpParams& params, const ForwardCache& cache,
                   const Mat& upstream) {
    check_params_shape(spec, params, "backward");
    if (upstream.rows != cache.output.rows || upstream.cols != cache.output.cols)
        throw ContractViolation("backward: upstream shape mismatch");

    Gradients g;
    g.params = make_params(spec);
    const int L = spec.num_layers();
    const int n = upstream.rows;

    Mat grad = upstream; // gradient w.r.t. the current layer's activation output
    for (int l = L - 1; l >= 0; --l) {
        const LayerCache& lc = cache.layers[l];
        const bool hidden = l < L - 1;

        // Through the activation.
        if (hidden) {
            for (std::size_t i = 0; i < grad.a.size(); ++i)
                if (lc.act_in.a[i] <= 0.0) grad.a[i] = 0.0;
        } else if (spec.output_activation == OutputActivation::tanh) {
            for (std::size_t i = 0; i < grad.a.size(); ++i) {
                const double y = cache.output.a[i];
                grad.a[i] *= 1.0 - y * y;
            }
        }

        // Through batch norm.
        if (hidden && spec.bn_at(l)) {
            const BatchNormParams& bn = params.bn[l];
            BatchNormParams& bng = g.params.bn[l];
            const int width = grad.cols;
            Mat dz(n, width);
            if (cache.mode == Mode::train) {
                for (int j = 0; j < width; ++j) {
                    const double invstd = 1.0 / std::sqrt(lc.bn_var[j] + kBnEpsilon);
                    double dgamma = 0.0, dbeta = 0.0, dxhat_sum = 0.0, dxhat_dot = 0.0;
                    for (int i = 0; i < n; ++i) {
                        const double dy = grad.at(i, j);
                        const double xh = lc.bn_xhat.at(i, j);
                        dgamma += dy * xh;
                        dbeta += dy;
                        const double dxh = dy * bn.gamma[j];
                        dxhat_sum += dxh;
                        dxhat_dot += dxh * xh;
                    }
                    bng.gamma[j] = dgamma;
                    bng.beta[j] = dbeta;
                    // dz_i = invstd/n * (n*dxhat_i - sum(dxhat) - xhat_i * sum(dxhat*xhat))
                    for (int i = 0; i < n; ++i) {
                        const double dxh = grad.at(i, j) * bn.gamma[j];
                        dz.at(i, j) = invstd / n *
                                      (n * dxh - dxhat_sum - lc.bn_xhat.at(i, j) * dxhat_dot);
                    }
                }
            } else {
                for (int j = 0; j < width; ++j) {
                    const double invstd = 1.0 / std::sqrt(lc.bn_var[j] + kBnEpsilon);
                    double dgamma = 0.0, dbeta = 0.0;
                    for (int i = 0; i < n; ++i) {
                        const double dy = grad.at(i, j);
                        dgamma += dy * lc.bn_xhat.at(i, j);
                        dbeta += dy;
                        dz.at(i, j) = dy * bn.gamma[j] * invstd;
                    }
                    bng.gamma[j] = dgamma;
                    bng.beta[j] = dbeta;
                }
            }
            grad = std::move(dz);
        }

        // Through the affine map.
        affine_backward_params(grad, lc.in, g.params.w[l], g.params.b[l]);
        if (l > 0) {
            Mat dx;
            affine_backward_input(grad, params.w[l], dx);
            grad = std::move(dx);
        } else {
            affine_backward_input(grad, params.w[l], g.inputs);
        }
    }
    return g;
}

Gradients backward(const MlpSpec& spec, const MlpParams& params, const Mat& inputs,
                   const Mat& upstream, Mode mode) {
    ForwardCache cache;
    forward(spec, params, inputs, mode, &cache);
    return backward(spec, params, cache, upstream);
}

AdamState make_adam(const MlpSpec& spec, double lr) {
    AdamState s;
    s.m = make_params(spec);
    s.v = make_params(spec);
    // Accumulators start at zero everywhere, including batch-norm slots
    // (make_params seeds gamma/running_var at 1 for the identity transform).
    auto zero_bn = [](MlpParams& p) {
        for (auto& bn : p.bn) {
            for (auto& x : bn.gamma) x = 0.0;
            for (auto& x : bn.beta) x = 0.0;
            for (auto& x : bn.running_mean) x = 0.0;
            for (auto& x : bn.running_var) x = 0.0;
        }
    };
    zero_bn(s.m);
    zero_bn(s.v);
    s.lr = lr;
    return s;
}

namespace {

// Applies fn to each trainable tensor of up to four parallel parameter sets.
template <class Fn>
void zip_trainable(MlpParams& a, const MlpParams& b, MlpParams& c, MlpParams& d, Fn&& fn) {
    for (std::size_t l = 0; l < a.w.size(); ++l) {
        fn(a.w[l].a, b.w[l].a, c.w[l].a, d.w[l].a);
        fn(a.b[l], b.b[l], c.b[l], d.b[l]);
        if (l < a.bn.size() && !a.bn[l].empty()) {
            fn(a.bn[l].gamma, b.bn[l].gamma, c.bn[l].gamma, d.bn[l].gamma);
            fn(a.bn[l].beta, b.bn[l].beta, c.bn[l].beta, d.bn[l].beta);
        }
    }
}

template <class Fn>
void each_trainable_const(const MlpParams& p, Fn&& fn) {
    for (std::size_t l = 0; l < p.w.size(); ++l) {
        fn(p.w[l].a);
        fn(p.b[l]);
        if (l < p.bn.size() && !p.bn[l].empty()) {
            fn(p.bn[l].gamma);
            fn(p.bn[l].beta);
        }
    }
}

template <class Fn>
void each_trainable(MlpParams& p, Fn&& fn) {
    for (std::size_t l = 0; l < p.w.size(); ++l) {
        fn(p.w[l].a);
        fn(p.b[l]);
        if (l < p.bn.size() && !p.bn[l].empty()) {
            fn(p.bn[l].gamma);
            fn(p.bn[l].beta);
        }
    }
}

void check_parallel(const MlpParams& a, const MlpParams& b, const char* who) {
    if (a.w.size() != b.w.size()) throw ContractViolation(std::string(who) + ": layer mismatch");
    for (std::size_t l = 0; l < a.w.size(); ++l) {
        if (!a.w[l].same_shape(b.w[l]) || a.b[l].size() != b.b[l].size())
            throw ContractViolation(std::string(who) + ": tensor shape mismatch");
        const bool abn = l < a.bn.size() && !a.bn[l].empty();
        const bool bbn = l < b.bn.size() && !b.bn[l].empty();
        if (abn != bbn || (abn && a.bn[l].gamma.size() != b.bn[l].gamma.size()))
            throw ContractViolation(std::string(who) + ": batch-norm shape mismatch");
    }
}

} // namespace

void adam_step(MlpParams& params, const MlpParams& grads, AdamState& state) {
    check_parallel(params, grads, "adam_step");
    check_parallel(params, state.m, "adam_step");
    state.t += 1;
    const double c1 = 1.0 - std::pow(state.beta1, static_cast<double>(state.t));
    const double c2 = 1.0 - std::pow(state.beta2, static_cast<double>(state.t));
    auto upd = [&](std::vector<double>& p, const std::vector<double>& g, std::vector<double>& m,
                   std::vector<double>& v) {
        for (std::size_t i = 0; i < p.size(); ++i) {
            m[i] = state.beta1 * m[i] + (1.0 - state.beta1) * g[i];
            v[i] = state.beta2 * v[i] + (1.0 - state.beta2) * g[i] * g[i];
            const double mhat = m[i] / c1;
            const double vhat = v[i] / c2;
            p[i] -= state.lr * mhat / (std::sqrt(vhat) + state.eps);
        }
    };
    // grads is logically const; zip_trainable takes it as the read-only slot.
    zip_trainable(params, grads, state.m, state.v, upd);
}

void soft_update(MlpParams& target, const MlpParams& online, double tau) {
    check_parallel(target, online, "soft_update");
    auto blend = [tau](std::vector<double>& t, const std::vector<double>& o) {
        for (std::size_t i = 0; i < t.size(); ++i) t[i] = tau * o[i] + (1.0 - tau) * t[i];
    };
    for (std::size_t l = 0; l < target.w.size(); ++l) {
        blend(target.w[l].a, online.w[l].a);
        blend(target.b[l], online.b[l]);
        if (l < target.bn.size() && !target.bn[l].empty()) {
            blend(target.bn[l].gamma, online.bn[l].gamma);
            blend(target.bn[l].beta, online.bn[l].beta);
            blend(target.bn[l].running_mean, online.bn[l].running_mean);
            blend(target.bn[l].running_var, online.bn[l].running_var);
        }
    }
}

double global_norm(const MlpParams& grads) {
    double ss = 0.0;
    each_trainable_const(grads, [&](const std::vector<double>& t) {
        for (double x : t) ss += x * x;
    });
    return std::sqrt(ss);
}

void clip_global_norm(MlpParams& grads, double max_norm) {
    const double norm = global_norm(grads);
    if (norm <= max_norm || norm == 0.0) return;
    const double scale = max_norm / norm;
    each_trainable(grads, [&](std::vector<double>& t) {
        for (double& x : t) x *= scale;
    });
}

namespace {

template <class Fn>
void each_serialized_tensor_const(const MlpParams& p, Fn&& fn) {
    for (std::size_t l = 0; l < p.w.size(); ++l) {
        fn(p.w[l].a);
        fn(p.b[l]);
        if (l < p.bn.size() && !p.bn[l].empty()) {
            fn(p.bn[l].gamma);
            fn(p.bn[l].beta);
            fn(p.bn[l].running_mean);
            fn(p.bn[l].running_var);
        }
    }
}

template <class Fn>
void each_serialized_tensor(MlpParams& p, Fn&& fn) {
    for (std::size_t l = 0; l < p.w.size(); ++l) {
        fn(p.w[l].a);
        fn(p.b[l]);
        if (l < p.bn.size() && !p.bn[l].empty()) {
            fn(p.bn[l].gamma);
            fn(p.bn[l].beta);
            fn(p.bn[l].running_mean);
            fn(p.bn[l].running_var);
        }
    }
}

} // namespace

std::vector<unsigned char> serialize_params(const MlpSpec& spec, const MlpParams& params) {
    check_params_shape(spec, params, "serialize_params");
    std::vector<unsigned char> out;
    out.reserve(16 + static_cast<std::size_t>(spec.param_count()) * 8);
    out.push_back('M');
    out.push_back('L');
    out.push_back('P');
    out.push_back('W');
    put_u32(out, kWeightFormatVersion);
    put_u64(out, static_cast<std::uint64_t>(spec.param_count()));
    each_serialized_tensor_const(params, [&](const std::vector<double>& t) {
        for (double x : t) put_f64(out, x);
    });
    return out;
}

MlpParams deserialize_params(const MlpSpec& spec, const std::vector<unsigned char>& bytes,
                             const std::string& name) {
    ByteReader r(bytes, name);
    char magic[4];
    r.raw(magic, 4);
    if (std::memcmp(magic, "MLPW", 4) != 0)
        throw CorruptionError("bad magic in weight file: " + name);
    const std::uint32_t version = r.u32();
    if (version != kWeightFormatVersion)
        throw FormatError("unsupported weight format version " + std::to_string(version) +
                          " in " + name);
    const std::uint64_t count = r.u64();
    if (count != static_cast<std::uint64_t>(spec.param_count()))
        throw CorruptionError("parameter count mismatch in " + name);
    MlpParams p = make_params(spec);
    each_serialized_tensor(p, [&](std::vector<double>& t) {
        for (double& x : t) x = r.f64();
    });
    if (!r.at_end()) throw CorruptionError("trailing bytes in weight file: " + name);
    return p;
}

void save_params(const std::string& path, const MlpSpec& spec, const MlpParams& params) {
    write_file_bytes(path, serialize_params(spec, params));
}

MlpParams load_params(const std::string& path, const MlpSpec& spec) {
    return deserialize_params(spec, read_file_bytes(path), path);
}

} // namespace mpdrive
