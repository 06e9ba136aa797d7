#include "budgetnet/ops.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>

#include "budgetnet/gemm.hpp"

namespace bnet::ops {

namespace {

template <typename T>
void check_conv_args(const Tensor<T>& input, const Tensor<T>& weight, int64_t stride,
                     int64_t padding) {
    check_rank(input.shape, 4, "conv2d input");
    check_rank(weight.shape, 4, "conv2d weight");
    if (weight.dim(2) != weight.dim(3))
        throw ConfigError("conv2d: kernel must be square, got " + weight.shape_str());
    if (input.dim(1) != weight.dim(1))
        throw ConfigError("conv2d: input has " + std::to_string(input.dim(1)) +
                          " channels but weight expects " + std::to_string(weight.dim(1)));
    if (stride < 1) throw ConfigError("conv2d: stride must be >= 1, got " + std::to_string(stride));
    if (padding < 0) throw ConfigError("conv2d: padding must be >= 0, got " + std::to_string(padding));
    const int64_t f = weight.dim(2);
    if (f < 1) throw ConfigError("conv2d: kernel size must be >= 1");
    if (input.dim(2) + 2 * padding < f || input.dim(3) + 2 * padding < f)
        throw ConfigError("conv2d: kernel " + std::to_string(f) + " larger than padded input " +
                          input.shape_str() + " with padding " + std::to_string(padding));
}

// cols[ci*F*F + fy*F + fx][oy*OW + ox] = padded input pixel, one image.
template <typename T>
void im2col(const T* img, int64_t C, int64_t H, int64_t W, int64_t F, int64_t stride, int64_t pad,
            int64_t OH, int64_t OW, T* cols) {
    for (int64_t c = 0; c < C; ++c) {
        const T* plane = img + c * H * W;
        for (int64_t fy = 0; fy < F; ++fy) {
            for (int64_t fx = 0; fx < F; ++fx) {
                T* row = cols + ((c * F + fy) * F + fx) * OH * OW;
                for (int64_t oy = 0; oy < OH; ++oy) {
                    const int64_t iy = oy * stride - pad + fy;
                    T* out = row + oy * OW;
                    if (iy < 0 || iy >= H) {
                        std::fill(out, out + OW, T(0));
                        continue;
                    }
                    const T* src = plane + iy * W;
                    for (int64_t ox = 0; ox < OW; ++ox) {
                        const int64_t ix = ox * stride - pad + fx;
                        out[ox] = (ix >= 0 && ix < W) ? src[ix] : T(0);
                    }
                }
            }
        }
    }
}

// rows[oy*OW + ox][ci*F*F + fy*F + fx] — transposed patch matrix, one image.
template <typename T>
void im2row(const T* img, int64_t C, int64_t H, int64_t W, int64_t F, int64_t stride, int64_t pad,
            int64_t OH, int64_t OW, T* rows) {
    const int64_t patch = C * F * F;
    for (int64_t oy = 0; oy < OH; ++oy) {
        for (int64_t ox = 0; ox < OW; ++ox) {
            T* row = rows + (oy * OW + ox) * patch;
            for (int64_t c = 0; c < C; ++c) {
                const T* plane = img + c * H * W;
                for (int64_t fy = 0; fy < F; ++fy) {
                    const int64_t iy = oy * stride - pad + fy;
                    T* dst = row + (c * F + fy) * F;
                    if (iy < 0 || iy >= H) {
                        std::fill(dst, dst + F, T(0));
                        continue;
                    }
                    for (int64_t fx = 0; fx < F; ++fx) {
                        const int64_t ix = ox * stride - pad + fx;
                        dst[fx] = (ix >= 0 && ix < W) ? plane[iy * W + ix] : T(0);
                    }
                }
            }
        }
    }
}

// Scatter-accumulate of the column gradient back onto one image.
template <typename T>
void col2im_acc(const T* cols, int64_t C, int64_t H, int64_t W, int64_t F, int64_t stride,
                int64_t pad, int64_t OH, int64_t OW, T* img) {
    for (int64_t c = 0; c < C; ++c) {
        T* plane = img + c * H * W;
        for (int64_t fy = 0; fy < F; ++fy) {
            for (int64_t fx = 0; fx < F; ++fx) {
                const T* row = cols + ((c * F + fy) * F + fx) * OH * OW;
                for (int64_t oy = 0; oy < OH; ++oy) {
                    const int64_t iy = oy * stride - pad + fy;
                    if (iy < 0 || iy >= H) continue;
                    const T* src = row + oy * OW;
                    T* dst = plane + iy * W;
                    for (int64_t ox = 0; ox < OW; ++ox) {
                        const int64_t ix = ox * stride - pad + fx;
                        if (ix >= 0 && ix < W) dst[ix] += src[ox];
                    }
                }
            }
        }
    }
}

template <typename T>
std::vector<T>& scratch(int which, size_t n) {
    thread_local std::vector<T> bufs[3];
    bufs[which].resize(n);
    return bufs[which];
}

}  // namespace

template <typename T>
Tensor<T> conv2d_forward(const Tensor<T>& input, const Tensor<T>& weight, int64_t stride,
                         int64_t padding) {
    check_conv_args(input, weight, stride, padding);
    const int64_t N = input.dim(0), C = input.dim(1), H = input.dim(2), W = input.dim(3);
    const int64_t Cout = weight.dim(0), F = weight.dim(2);
    const int64_t OH = conv_out_dim(H, F, stride, padding);
    const int64_t OW = conv_out_dim(W, F, stride, padding);
    Tensor<T> out({N, Cout, OH, OW});

    const int64_t patch = C * F * F;
    auto& cols = scratch<T>(0, static_cast<size_t>(patch * OH * OW));
    for (int64_t n = 0; n < N; ++n) {
        im2col(input.ptr() + n * C * H * W, C, H, W, F, stride, padding, OH, OW, cols.data());
        // out_n[Cout, OH*OW] = weight[Cout, patch] * cols[patch, OH*OW]
        gemm_nn_acc(Cout, OH * OW, patch, weight.ptr(), cols.data(),
                    out.ptr() + n * Cout * OH * OW);
    }
    return out;
}

template <typename T>
Tensor<T> conv2d_forward_direct(const Tensor<T>& input, const Tensor<T>& weight, int64_t stride,
                                int64_t padding) {
    check_conv_args(input, weight, stride, padding);
    const int64_t N = input.dim(0), C = input.dim(1), H = input.dim(2), W = input.dim(3);
    const int64_t Cout = weight.dim(0), F = weight.dim(2);
    const int64_t OH = conv_out_dim(H, F, stride, padding);
    const int64_t OW = conv_out_dim(W, F, stride, padding);
    Tensor<T> out({N, Cout, OH, OW});

    for (int64_t n = 0; n < N; ++n) {
        for (int64_t co = 0; co < Cout; ++co) {
            for (int64_t oy = 0; oy < OH; ++oy) {
                for (int64_t ox = 0; ox < OW; ++ox) {
                    T acc = 0;
                    for (int64_t ci = 0; ci < C; ++ci) {
                        for (int64_t fy = 0; fy < F; ++fy) {
                            const int64_t iy = oy * stride - padding + fy;
                            if (iy < 0 || iy >= H) continue;
                            for (int64_t fx = 0; fx < F; ++fx) {
                                const int64_t ix = ox * stride - padding + fx;
                                if (ix < 0 || ix >= W) continue;
                                acc += input.at(((n * C + ci) * H + iy) * W + ix) *
                                       weight.at(((co * C + ci) * F + fy) * F + fx);
                            }
                        }
                    }
                    out.at(((n * Cout + co) * OH + oy) * OW + ox) = acc;
                }
            }
        }
    }
    return out;
}

template <typename T>
Conv2dGrads<T> conv2d_backward(const Tensor<T>& grad_out, const Tensor<T>& input,
                               const Tensor<T>& weight, int64_t stride, int64_t padding) {
    check_conv_args(input, weight, stride, padding);
    const int64_t N = input.dim(0), C = input.dim(1), H = input.dim(2), W = input.dim(3);
    const int64_t Cout = weight.dim(0), F = weight.dim(2);
    const int64_t OH = conv_out_dim(H, F, stride, padding);
    const int64_t OW = conv_out_dim(W, F, stride, padding);
    if (grad_out.shape != std::vector<int64_t>{N, Cout, OH, OW})
        throw ConfigError("conv2d_backward: grad_out shape " + grad_out.shape_str() +
                          " does not match forward output [" + std::to_string(N) + "," +
                          std::to_string(Cout) + "," + std::to_string(OH) + "," +
                          std::to_string(OW) + "]");

    Conv2dGrads<T> g{Tensor<T>(input.shape), Tensor<T>(weight.shape)};
    const int64_t patch = C * F * F;

    // weight^T, [patch, Cout], shared across images.
    auto& wt = scratch<T>(0, static_cast<size_t>(patch * Cout));
    for (int64_t co = 0; co < Cout; ++co)
        for (int64_t p = 0; p < patch; ++p) wt[p * Cout + co] = weight.at(co * patch + p);

    auto& gcols = scratch<T>(1, static_cast<size_t>(patch * OH * OW));
    auto& rows = scratch<T>(2, static_cast<size_t>(OH * OW * patch));
    for (int64_t n = 0; n < N; ++n) {
        const T* go_n = grad_out.ptr() + n * Cout * OH * OW;
        // grad input: cols-space gradient, then scatter back.
        std::fill(gcols.begin(), gcols.end(), T(0));
        gemm_nn_acc(patch, OH * OW, Cout, wt.data(), go_n, gcols.data());
        col2im_acc(gcols.data(), C, H, W, F, stride, padding, OH, OW,
                   g.input.data.data() + n * C * H * W);
        // grad weight accumulates over the batch, image by image.
        im2row(input.ptr() + n * C * H * W, C, H, W, F, stride, padding, OH, OW, rows.data());
        gemm_nn_acc(Cout, patch, OH * OW, go_n, rows.data(), g.weight.data.data());
    }
    return g;
}

template <typename T>
Tensor<T> batchnorm_forward(const Tensor<T>& input, BatchNormState<T>& state, Mode mode,
                            BatchNormCache<T>* cache) {
    check_rank(input.shape, 4, "batchnorm input");
    const int64_t N = input.dim(0), C = input.dim(1), H = input.dim(2), W = input.dim(3);
    if (C != state.channels())
        throw ConfigError("batchnorm: input has " + std::to_string(C) + " channels, state has " +
                          std::to_string(state.channels()));
    const int64_t m = N * H * W;
    Tensor<T> out(input.shape);
    const int64_t plane = H * W;

    if (mode == Mode::kTrain) {
        if (m < 2)
            throw NumericError("batchnorm: train mode needs at least 2 values per channel, got " +
                               std::to_string(m));
        if (cache) {
            cache->x_hat = Tensor<T>(input.shape);
            cache->inv_std.assign(static_cast<size_t>(C), T(0));
        }
        for (int64_t c = 0; c < C; ++c) {
            double sum = 0.0, sumsq = 0.0;
            for (int64_t n = 0; n < N; ++n) {
                const T* src = input.ptr() + (n * C + c) * plane;
                for (int64_t i = 0; i < plane; ++i) {
                    const double v = static_cast<double>(src[i]);
                    sum += v;
                    sumsq += v * v;
                }
            }
            const double mean = sum / static_cast<double>(m);
            double var = sumsq / static_cast<double>(m) - mean * mean;  // population variance
            if (var < 0.0) var = 0.0;
            const T mu = static_cast<T>(mean);
            const T inv = T(1) / std::sqrt(static_cast<T>(var) + state.eps);
            const T ga = state.gamma.at(c), be = state.beta.at(c);
            for (int64_t n = 0; n < N; ++n) {
                const T* src = input.ptr() + (n * C + c) * plane;
                T* dst = out.ptr() + (n * C + c) * plane;
                T* xh = cache ? cache->x_hat.ptr() + (n * C + c) * plane : nullptr;
                for (int64_t i = 0; i < plane; ++i) {
                    const T h = (src[i] - mu) * inv;
                    if (xh) xh[i] = h;
                    dst[i] = ga * h + be;
                }
            }
            if (cache) cache->inv_std[static_cast<size_t>(c)] = inv;
            const T mom = state.momentum;
            state.running_mean.at(c) = (T(1) - mom) * state.running_mean.at(c) + mom * mu;
            state.running_var.at(c) =
                (T(1) - mom) * state.running_var.at(c) + mom * static_cast<T>(var);
        }
    } else {
        for (int64_t c = 0; c < C; ++c) {
            const T mu = state.running_mean.at(c);
            const T inv = T(1) / std::sqrt(state.running_var.at(c) + state.eps);
            const T ga = state.gamma.at(c), be = state.beta.at(c);
            for (int64_t n = 0; n < N; ++n) {
                const T* src = input.ptr() + (n * C + c) * plane;
                T* dst = out.ptr() + (n * C + c) * plane;
                for (int64_t i = 0; i < plane; ++i) dst[i] = ga * (src[i] - mu) * inv + be;
            }
        }
    }
    return out;
}

template <typename T>
BatchNormGrads<T> batchnorm_backward(const Tensor<T>& grad_out, const BatchNormState<T>& state,
                                     const BatchNormCache<T>& cache) {
    check_rank(grad_out.shape, 4, "batchnorm grad_out");
    if (grad_out.shape != cache.x_hat.shape)
        throw UsageError("batchnorm_backward: grad_out shape " + grad_out.shape_str() +
                         " does not match cached forward " + cache.x_hat.shape_str());
    const int64_t N = grad_out.dim(0), C = grad_out.dim(1), H = grad_out.dim(2),
                  W = grad_out.dim(3);
    const int64_t m = N * H * W, plane = H * W;

    BatchNormGrads<T> g{Tensor<T>(grad_out.shape), Tensor<T>({C}), Tensor<T>({C})};
    for (int64_t c = 0; c < C; ++c) {
        double sum_g = 0.0, sum_gx = 0.0;
        for (int64_t n = 0; n < N; ++n) {
            const T* go = grad_out.ptr() + (n * C + c) * plane;
            const T* xh = cache.x_hat.ptr() + (n * C + c) * plane;
            for (int64_t i = 0; i < plane; ++i) {
                sum_g += static_cast<double>(go[i]);
                sum_gx += static_cast<double>(go[i]) * static_cast<double>(xh[i]);
            }
        }
        g.beta.at(c) = static_cast<T>(sum_g);
        g.gamma.at(c) = static_cast<T>(sum_gx);
        // dx = gamma*inv_std/m * (m*g - sum(g) - xhat*sum(g*xhat))
        const T scale = state.gamma.at(c) * cache.inv_std[static_cast<size_t>(c)] /
                        static_cast<T>(m);
        const T sg = static_cast<T>(sum_g), sgx = static_cast<T>(sum_gx);
        for (int64_t n = 0; n < N; ++n) {
            const T* go = grad_out.ptr() + (n * C + c) * plane;
            const T* xh = cache.x_hat.ptr() + (n * C + c) * plane;
            T* gi = g.input.ptr() + (n * C + c) * plane;
            for (int64_t i = 0; i < plane; ++i)
                gi[i] = scale * (static_cast<T>(m) * go[i] - sg - xh[i] * sgx);
        }
    }
    return g;
}

template <typename T>
Tensor<T> linear_forward(const Tensor<T>& input, const Tensor<T>& weight, const Tensor<T>& bias) {
    check_rank(input.shape, 2, "linear input");
    check_rank(weight.shape, 2, "linear weight");
    check_rank(bias.shape, 1, "linear bias");
    const int64_t N = input.dim(0), D = input.dim(1), M = weight.dim(1);
    if (weight.dim(0) != D)
        throw ConfigError("linear: input features " + std::to_string(D) + " vs weight rows " +
                          std::to_string(weight.dim(0)));
    if (bias.dim(0) != M)
        throw ConfigError("linear: bias length " + std::to_string(bias.dim(0)) + " vs weight cols " +
                          std::to_string(M));
    Tensor<T> out({N, M});
    gemm_nn_acc(N, M, D, input.ptr(), weight.ptr(), out.ptr());
    for (int64_t n = 0; n < N; ++n) {
        T* row = out.ptr() + n * M;
        for (int64_t j = 0; j < M; ++j) row[j] += bias.at(j);
    }
    return out;
}

template <typename T>
LinearGrads<T> linear_backward(const Tensor<T>& grad_out, const Tensor<T>& input,
                               const Tensor<T>& weight) {
    check_rank(grad_out.shape, 2, "linear grad_out");
    const int64_t N = input.dim(0), D = input.dim(1), M = weight.dim(1);
    if (grad_out.dim(0) != N || grad_out.dim(1) != M)
        throw UsageError("linear_backward: grad_out shape " + grad_out.shape_str());

    LinearGrads<T> g{Tensor<T>({N, D}), Tensor<T>({D, M}), Tensor<T>({M})};
    // grad_input = grad_out * weight^T
    auto& wt = scratch<T>(0, static_cast<size_t>(D * M));
    for (int64_t d = 0; d < D; ++d)
        for (int64_t j = 0; j < M; ++j) wt[j * D + d] = weight.at(d * M + j);
    gemm_nn_acc(N, D, M, grad_out.ptr(), wt.data(), g.input.ptr());
    // grad_weight = input^T * grad_out
    auto& it = scratch<T>(1, static_cast<size_t>(N * D));
    for (int64_t n = 0; n < N; ++n)
        for (int64_t d = 0; d < D; ++d) it[d * N + n] = input.at(n * D + d);
    gemm_nn_acc(D, M, N, it.data(), grad_out.ptr(), g.weight.ptr());
    for (int64_t n = 0; n < N; ++n)
        for (int64_t j = 0; j < M; ++j) g.bias.at(j) += grad_out.at(n * M + j);
    return g;
}

template <typename T>
Tensor<T> avgpool_forward(const Tensor<T>& input, int64_t pool) {
    check_rank(input.shape, 4, "avgpool input");
    const int64_t N = input.dim(0), C = input.dim(1), H = input.dim(2), W = input.dim(3);
    if (pool < 1) throw ConfigError("avgpool: kernel must be >= 1, got " + std::to_string(pool));
    if (H % pool != 0 || W % pool != 0)
        throw ConfigError("avgpool: kernel " + std::to_string(pool) + " does not divide input " +
                          input.shape_str());
    const int64_t OH = H / pool, OW = W / pool;
    Tensor<T> out({N, C, OH, OW});
    const T inv = T(1) / static_cast<T>(pool * pool);
    for (int64_t nc = 0; nc < N * C; ++nc) {
        const T* src = input.ptr() + nc * H * W;
        T* dst = out.ptr() + nc * OH * OW;
        for (int64_t oy = 0; oy < OH; ++oy) {
            for (int64_t ox = 0; ox < OW; ++ox) {
                T acc = 0;
                for (int64_t py = 0; py < pool; ++py) {
                    const T* row = src + (oy * pool + py) * W + ox * pool;
                    for (int64_t px = 0; px < pool; ++px) acc += row[px];
                }
                dst[oy * OW + ox] = acc * inv;
            }
        }
    }
    return out;
}

template <typename T>
Tensor<T> avgpool_backward(const Tensor<T>& grad_out, int64_t pool) {
    check_rank(grad_out.shape, 4, "avgpool grad_out");
    const int64_t N = grad_out.dim(0), C = grad_out.dim(1), OH = grad_out.dim(2),
                  OW = grad_out.dim(3);
    Tensor<T> g({N, C, OH * pool, OW * pool});
    const int64_t H = OH * pool, W = OW * pool;
    const T inv = T(1) / static_cast<T>(pool * pool);
    for (int64_t nc = 0; nc < N * C; ++nc) {
        const T* src = grad_out.ptr() + nc * OH * OW;
        T* dst = g.ptr() + nc * H * W;
        for (int64_t oy = 0; oy < OH; ++oy) {
            for (int64_t ox = 0; ox < OW; ++ox) {
                const T v = src[oy * OW + ox] * inv;
                for (int64_t py = 0; py < pool; ++py) {
                    T* row = dst + (oy * pool + py) * W + ox * pool;
                    for (int64_t px = 0; px < pool; ++px) row[px] = v;
                }
            }
        }
    }
    return g;
}

template <typename T>
Tensor<T> relu(const Tensor<T>& input) {
    Tensor<T> out(input.shape);
    for (int64_t i = 0; i < input.numel(); ++i) out.at(i) = input.at(i) > T(0) ? input.at(i) : T(0);
    return out;
}

template <typename T>
Tensor<T> relu_backward(const Tensor<T>& grad_out, const Tensor<T>& input) {
    if (grad_out.shape != input.shape)
        throw UsageError("relu_backward: shape mismatch " + grad_out.shape_str() + " vs " +
                         input.shape_str());
    Tensor<T> g(input.shape);
    for (int64_t i = 0; i < input.numel(); ++i)
        g.at(i) = input.at(i) > T(0) ? grad_out.at(i) : T(0);
    return g;
}

template <typename T>
Tensor<T> sigmoid(const Tensor<T>& input) {
    Tensor<T> out(input.shape);
    for (int64_t i = 0; i < input.numel(); ++i) out.at(i) = T(1) / (T(1) + std::exp(-input.at(i)));
    return out;
}

template <typename T>
Tensor<T> sigmoid_backward(const Tensor<T>& grad_out, const Tensor<T>& output) {
    if (grad_out.shape != output.shape)
        throw UsageError("sigmoid_backward: shape mismatch " + grad_out.shape_str() + " vs " +
                         output.shape_str());
    Tensor<T> g(output.shape);
    for (int64_t i = 0; i < output.numel(); ++i) {
        const T s = output.at(i);
        g.at(i) = grad_out.at(i) * s * (T(1) - s);
    }
    return g;
}

template <typename T>
DropoutResult<T> dropout_forward(const Tensor<T>& input, double p, RngStream* rng, Mode mode) {
    if (p < 0.0 || p >= 1.0)
        throw ConfigError("dropout: p must be in [0,1), got " + std::to_string(p));
    DropoutResult<T> r;
    if (mode == Mode::kEval || p == 0.0) {
        r.output = input;  // identity; draws nothing
        return r;
    }
    if (!rng) throw UsageError("dropout: train mode with p > 0 requires an rng stream");
    r.mask.resize(static_cast<size_t>(input.numel()));
    for (size_t i = 0; i < r.mask.size(); ++i) r.mask[i] = rng->uniform() < p ? 0 : 1;
    r.output = dropout_apply_mask(input, r.mask, p);
    return r;
}

template <typename T>
Tensor<T> dropout_apply_mask(const Tensor<T>& input, const std::vector<uint8_t>& mask, double p) {
    if (mask.empty()) return input;
    if (static_cast<int64_t>(mask.size()) != input.numel())
        throw UsageError("dropout: mask length " + std::to_string(mask.size()) +
                         " vs input size " + std::to_string(input.numel()));
    const T scale = static_cast<T>(1.0 / (1.0 - p));
    Tensor<T> out(input.shape);
    for (int64_t i = 0; i < input.numel(); ++i)
        out.at(i) = mask[static_cast<size_t>(i)] ? input.at(i) * scale : T(0);
    return out;
}

template <typename T>
Tensor<T> dropout_backward(const Tensor<T>& grad_out, const std::vector<uint8_t>& mask, double p) {
    return dropout_apply_mask(grad_out, mask, p);
}

template <typename T>
LossResult<T> softmax_cross_entropy(const Tensor<T>& logits, const std::vector<int>& labels) {
    check_rank(logits.shape, 2, "softmax_cross_entropy logits");
    const int64_t N = logits.dim(0), K = logits.dim(1);
    if (static_cast<int64_t>(labels.size()) != N)
        throw UsageError("softmax_cross_entropy: " + std::to_string(labels.size()) +
                         " labels for batch of " + std::to_string(N));
    for (int lab : labels)
        if (lab < 0 || lab >= K)
            throw DataError("softmax_cross_entropy: label " + std::to_string(lab) +
                            " outside [0," + std::to_string(K) + ")");

    LossResult<T> r{0.0, Tensor<T>({N, K})};
    double total = 0.0;
    const T invn = T(1) / static_cast<T>(N);
    for (int64_t n = 0; n < N; ++n) {
        const T* row = logits.ptr() + n * K;
        T* grow = r.grad_logits.ptr() + n * K;
        T mx = row[0];
        for (int64_t k = 1; k < K; ++k) mx = std::max(mx, row[k]);
        double denom = 0.0;
        for (int64_t k = 0; k < K; ++k) denom += std::exp(static_cast<double>(row[k] - mx));
        const int lab = labels[static_cast<size_t>(n)];
        total += std::log(denom) - static_cast<double>(row[lab] - mx);
        const T inv_denom = static_cast<T>(1.0 / denom);
        for (int64_t k = 0; k < K; ++k) {
            const T sm = static_cast<T>(std::exp(static_cast<double>(row[k] - mx))) * inv_denom;
            grow[k] = (sm - (k == lab ? T(1) : T(0))) * invn;
        }
    }
    r.loss = total / static_cast<double>(N);
    return r;
}

template <typename T>
Tensor<T> se_forward(const Tensor<T>& input, const Tensor<T>& fc1_w, const Tensor<T>& fc1_b,
                     const Tensor<T>& fc2_w, const Tensor<T>& fc2_b, SECache<T>* cache) {
    check_rank(input.shape, 4, "se input");
    const int64_t N = input.dim(0), C = input.dim(1), H = input.dim(2), W = input.dim(3);
    if (fc1_w.rank() != 2 || fc1_w.dim(0) != C)
        throw ConfigError("se: fc1 weight " + fc1_w.shape_str() + " does not accept " +
                          std::to_string(C) + " channels");
    const int64_t Cr = fc1_w.dim(1);
    if (fc2_w.rank() != 2 || fc2_w.dim(0) != Cr || fc2_w.dim(1) != C)
        throw ConfigError("se: fc2 weight " + fc2_w.shape_str() + " must be [" +
                          std::to_string(Cr) + "," + std::to_string(C) + "]");

    const int64_t plane = H * W;
    const T inv_plane = T(1) / static_cast<T>(plane);
    Tensor<T> squeeze({N, C});
    for (int64_t n = 0; n < N; ++n)
        for (int64_t c = 0; c < C; ++c) {
            const T* src = input.ptr() + (n * C + c) * plane;
            T acc = 0;
            for (int64_t i = 0; i < plane; ++i) acc += src[i];
            squeeze.at(n * C + c) = acc * inv_plane;
        }

    Tensor<T> hidden = relu(linear_forward(squeeze, fc1_w, fc1_b));
    Tensor<T> excite = sigmoid(linear_forward(hidden, fc2_w, fc2_b));

    Tensor<T> out(input.shape);
    for (int64_t n = 0; n < N; ++n)
        for (int64_t c = 0; c < C; ++c) {
            const T s = excite.at(n * C + c);
            const T* src = input.ptr() + (n * C + c) * plane;
            T* dst = out.ptr() + (n * C + c) * plane;
            for (int64_t i = 0; i < plane; ++i) dst[i] = src[i] * s;
        }
    if (cache) {
        cache->squeeze = std::move(squeeze);
        cache->hidden = std::move(hidden);
        cache->excite = std::move(excite);
    }
    return out;
}

template <typename T>
SEGrads<T> se_backward(const Tensor<T>& grad_out, const Tensor<T>& input, const Tensor<T>& fc1_w,
                       const Tensor<T>& fc2_w, const SECache<T>& cache) {
    if (grad_out.shape != input.shape)
        throw UsageError("se_backward: grad_out shape " + grad_out.shape_str() + " vs input " +
                         input.shape_str());
    const int64_t N = input.dim(0), C = input.dim(1), H = input.dim(2), W = input.dim(3);
    const int64_t plane = H * W;
    const T inv_plane = T(1) / static_cast<T>(plane);

    // Gate gradient: dL/ds[n,c] = sum_hw g * x; direct input path: g * s.
    Tensor<T> d_excite({N, C});
    SEGrads<T> g;
    g.input = Tensor<T>(input.shape);
    for (int64_t n = 0; n < N; ++n)
        for (int64_t c = 0; c < C; ++c) {
            const T* go = grad_out.ptr() + (n * C + c) * plane;
            const T* x = input.ptr() + (n * C + c) * plane;
            T* gi = g.input.ptr() + (n * C + c) * plane;
            const T s = cache.excite.at(n * C + c);
            T acc = 0;
            for (int64_t i = 0; i < plane; ++i) {
                acc += go[i] * x[i];
                gi[i] = go[i] * s;
            }
            d_excite.at(n * C + c) = acc;
        }

    Tensor<T> d_u = sigmoid_backward(d_excite, cache.excite);
    LinearGrads<T> l2 = linear_backward(d_u, cache.hidden, fc2_w);
    g.fc2_w = std::move(l2.weight);
    g.fc2_b = std::move(l2.bias);
    Tensor<T> d_a = relu_backward(l2.input, cache.hidden);  // hidden > 0 iff pre-act > 0
    LinearGrads<T> l1 = linear_backward(d_a, cache.squeeze, fc1_w);
    g.fc1_w = std::move(l1.weight);
    g.fc1_b = std::move(l1.bias);

    // Squeeze path: each channel mean spreads its gradient uniformly.
    for (int64_t n = 0; n < N; ++n)
        for (int64_t c = 0; c < C; ++c) {
            const T v = l1.input.at(n * C + c) * inv_plane;
            T* gi = g.input.ptr() + (n * C + c) * plane;
            for (int64_t i = 0; i < plane; ++i) gi[i] += v;
        }
    return g;
}

#define BNET_INSTANTIATE_OPS(T)                                                                    \
    template Tensor<T> conv2d_forward<T>(const Tensor<T>&, const Tensor<T>&, int64_t, int64_t);   \
    template Tensor<T> conv2d_forward_direct<T>(const Tensor<T>&, const Tensor<T>&, int64_t,      \
                                                int64_t);                                          \
    template Conv2dGrads<T> conv2d_backward<T>(const Tensor<T>&, const Tensor<T>&,                \
                                               const Tensor<T>&, int64_t, int64_t);               \
    template Tensor<T> batchnorm_forward<T>(const Tensor<T>&, BatchNormState<T>&, Mode,           \
                                            BatchNormCache<T>*);                                   \
    template BatchNormGrads<T> batchnorm_backward<T>(const Tensor<T>&, const BatchNormState<T>&,  \
                                                     const BatchNormCache<T>&);                    \
    template Tensor<T> linear_forward<T>(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&);   \
    template LinearGrads<T> linear_backward<T>(const Tensor<T>&, const Tensor<T>&,                \
                                               const Tensor<T>&);                                  \
    template Tensor<T> avgpool_forward<T>(const Tensor<T>&, int64_t);                             \
    template Tensor<T> avgpool_backward<T>(const Tensor<T>&, int64_t);                            \
    template Tensor<T> relu<T>(const Tensor<T>&);                                                 \
    template Tensor<T> relu_backward<T>(const Tensor<T>&, const Tensor<T>&);                      \
    template Tensor<T> sigmoid<T>(const Tensor<T>&);                                              \
    template Tensor<T> sigmoid_backward<T>(const Tensor<T>&, const Tensor<T>&);                   \
    template DropoutResult<T> dropout_forward<T>(const Tensor<T>&, double, RngStream*, Mode);     \
    template Tensor<T> dropout_apply_mask<T>(const Tensor<T>&, const std::vector<uint8_t>&,       \
                                             double);                                              \
    template Tensor<T> dropout_backward<T>(const Tensor<T>&, const std::vector<uint8_t>&,         \
                                           double);                                                \
    template LossResult<T> softmax_cross_entropy<T>(const Tensor<T>&, const std::vector<int>&);   \
    template Tensor<T> se_forward<T>(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&,        \
                                     const Tensor<T>&, const Tensor<T>&, SECache<T>*);            \
    template SEGrads<T> se_backward<T>(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&,      \
                                       const Tensor<T>&, const SECache<T>&);

BNET_INSTANTIATE_OPS(float)
BNET_INSTANTIATE_OPS(double)

#undef BNET_INSTANTIATE_OPS

}  // namespace bnet::ops
