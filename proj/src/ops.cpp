#include "har/ops.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>
#include <string>

namespace har {

namespace {

void require(bool cond, const std::string& msg) {
    if (!cond) throw std::invalid_argument(msg);
}

void require_rank(const TensorPtr& t, std::size_t rank, const char* op, const char* arg) {
    if (!t) throw std::invalid_argument(std::string(op) + ": null " + arg);
    if (t->rank() != rank) {
        throw std::invalid_argument(std::string(op) + ": " + arg + " must have rank " +
                                    std::to_string(rank) + ", got shape " + t->shape_str());
    }
}

bool any_requires_grad(std::initializer_list<const TensorPtr*> ts) {
    for (const TensorPtr* t : ts) {
        if (*t && (*t)->requires_grad) return true;
    }
    return false;
}

// Copies one batch item [C,L] into a zero-padded buffer [C, L+2*pad].
void pad_rows(const double* __restrict src, double* __restrict dst, std::size_t channels,
              std::size_t len, std::size_t pad) {
    const std::size_t padded = len + 2 * pad;
    for (std::size_t c = 0; c < channels; ++c) {
        double* row = dst + c * padded;
        std::fill(row, row + padded, 0.0);
        std::copy(src + c * len, src + (c + 1) * len, row + pad);
    }
}

// y[i] += a * x[i]
void axpy(double a, const double* __restrict x, double* __restrict y, std::size_t n) {
    for (std::size_t i = 0; i < n; ++i) y[i] = std::fma(a, x[i], y[i]);
}

// y[i] += a * x[i*stride]
void axpy_strided(double a, const double* __restrict x, std::size_t stride, double* __restrict y,
                  std::size_t n) {
    for (std::size_t i = 0; i < n; ++i) y[i] = std::fma(a, x[i * stride], y[i]);
}

// Eight fixed partial-sum lanes so the reduction vectorizes without any
// runtime-dependent reordering; the lane combine order is fixed.
double dot(const double* __restrict a, const double* __restrict b, std::size_t n) {
    double lanes[8] = {0, 0, 0, 0, 0, 0, 0, 0};
    std::size_t i = 0;
    for (; i + 8 <= n; i += 8) {
        for (std::size_t j = 0; j < 8; ++j) lanes[j] += a[i + j] * b[i + j];
    }
    double tail = 0.0;
    for (; i < n; ++i) tail += a[i] * b[i];
    return ((lanes[0] + lanes[1]) + (lanes[2] + lanes[3])) +
           ((lanes[4] + lanes[5]) + (lanes[6] + lanes[7])) + tail;
}

// out_row[l] accumulates fma(w, in_row[l*stride + k], .) for k ascending; one
// input channel's contribution. The K==5, stride==1 case is unrolled with the
// same per-element accumulation order as the generic path.
void conv_forward_rows(const double* __restrict in_row, const double* __restrict wr,
                       double* __restrict out_row, std::size_t k_len, std::size_t stride,
                       std::size_t l_out) {
    if (stride == 1 && k_len == 5) {
        const double w0 = wr[0], w1 = wr[1], w2 = wr[2], w3 = wr[3], w4 = wr[4];
        for (std::size_t l = 0; l < l_out; ++l) {
            double s = out_row[l];
            s = std::fma(w0, in_row[l], s);
            s = std::fma(w1, in_row[l + 1], s);
            s = std::fma(w2, in_row[l + 2], s);
            s = std::fma(w3, in_row[l + 3], s);
            s = std::fma(w4, in_row[l + 4], s);
            out_row[l] = s;
        }
        return;
    }
    for (std::size_t k = 0; k < k_len; ++k) {
        if (stride == 1) {
            axpy(wr[k], in_row + k, out_row, l_out);
        } else {
            axpy_strided(wr[k], in_row + k, stride, out_row, l_out);
        }
    }
}

// dpr[t] += sum_k wrev[k] * dext[t + k] for a zero-extended upstream gradient
// row; gather form avoids overlapping read-modify-write passes
void conv_input_grad_row(const double* __restrict dext, const double* __restrict wrev,
                         double* __restrict dpr, std::size_t k_len, std::size_t padded_len) {
    if (k_len == 5) {
        const double w0 = wrev[0], w1 = wrev[1], w2 = wrev[2], w3 = wrev[3], w4 = wrev[4];
        for (std::size_t t = 0; t < padded_len; ++t) {
            double s = dpr[t];
            s = std::fma(w0, dext[t], s);
            s = std::fma(w1, dext[t + 1], s);
            s = std::fma(w2, dext[t + 2], s);
            s = std::fma(w3, dext[t + 3], s);
            s = std::fma(w4, dext[t + 4], s);
            dpr[t] = s;
        }
        return;
    }
    for (std::size_t t = 0; t < padded_len; ++t) {
        double s = dpr[t];
        for (std::size_t k = 0; k < k_len; ++k) s = std::fma(wrev[k], dext[t + k], s);
        dpr[t] = s;
    }
}

// dw[k] += dot(drow, in_row + k); five independent accumulators hide the fma
// latency chain in the K==5 case
void conv_weight_grad_rows(const double* __restrict drow, const double* __restrict in_row,
                           double* __restrict dwr, std::size_t k_len, std::size_t stride,
                           std::size_t l_out) {
    for (std::size_t k = 0; k < k_len; ++k) {
        double s = 0.0;
        if (stride == 1) {
            s = dot(drow, in_row + k, l_out);
        } else {
            for (std::size_t l = 0; l < l_out; ++l) s = std::fma(drow[l], in_row[l * stride + k], s);
        }
        dwr[k] += s;
    }
}

}  // namespace

TensorPtr conv1d(const TensorPtr& input, const TensorPtr& weights, const TensorPtr& bias,
                 std::size_t stride, std::size_t padding) {
    require_rank(input, 3, "conv1d", "input");
    require_rank(weights, 3, "conv1d", "weights");
    require_rank(bias, 1, "conv1d", "bias");
    require(stride >= 1, "conv1d: stride must be >= 1");

    const std::size_t batch = input->shape[0];
    const std::size_t c_in = input->shape[1];
    const std::size_t len = input->shape[2];
    const std::size_t c_out = weights->shape[0];
    const std::size_t k_len = weights->shape[2];

    require(weights->shape[1] == c_in,
            "conv1d: weight input-channel dim " + std::to_string(weights->shape[1]) +
                " != input channel dim " + std::to_string(c_in));
    require(bias->shape[0] == c_out,
            "conv1d: bias dim " + std::to_string(bias->shape[0]) + " != output channel dim " +
                std::to_string(c_out));
    require(k_len >= 1, "conv1d: kernel_len must be >= 1");
    require(len + 2 * padding >= k_len,
            "conv1d: input length " + std::to_string(len) + " with padding " +
                std::to_string(padding) + " is shorter than kernel " + std::to_string(k_len));

    const std::size_t padded_len = len + 2 * padding;
    const std::size_t l_out = (padded_len - k_len) / stride + 1;

    // processing a small block of output channels per input-row visit keeps
    // the padded input from cycling through cache once per channel
    constexpr std::size_t kCoBlock = 4;

    auto out = Tensor::create({batch, c_out, l_out});
    std::vector<double> padbuf(c_in * padded_len);
    for (std::size_t b = 0; b < batch; ++b) {
        pad_rows(input->data.data() + b * c_in * len, padbuf.data(), c_in, len, padding);
        for (std::size_t co0 = 0; co0 < c_out; co0 += kCoBlock) {
            const std::size_t cb = std::min(kCoBlock, c_out - co0);
            for (std::size_t j = 0; j < cb; ++j) {
                double* out_row = out->data.data() + (b * c_out + co0 + j) * l_out;
                std::fill(out_row, out_row + l_out, bias->data[co0 + j]);
            }
            for (std::size_t ci = 0; ci < c_in; ++ci) {
                const double* in_row = padbuf.data() + ci * padded_len;
                for (std::size_t j = 0; j < cb; ++j) {
                    const std::size_t co = co0 + j;
                    conv_forward_rows(in_row, weights->data.data() + (co * c_in + ci) * k_len,
                                      out->data.data() + (b * c_out + co) * l_out, k_len, stride,
                                      l_out);
                }
            }
        }
    }

    if (any_requires_grad({&input, &weights, &bias})) {
        out->requires_grad = true;
        out->parents = {input, weights, bias};
        TensorPtr in = input, w = weights, bi = bias;
        Tensor* o = out.get();
        out->backward_fn = [in, w, bi, o, stride, padding, batch, c_in, len, c_out, k_len,
                            padded_len, l_out]() {
            const double* dout = o->grad.data();
            // grad w.r.t. input, via scatter into a padded buffer
            if (in->requires_grad) {
                in->ensure_grad();
                std::vector<double> dpad(c_in * padded_len);
                if (stride == 1) {
                    // zero-extended upstream gradient rows plus reversed
                    // kernels turn the scatter into contiguous gathers
                    const std::size_t ext_len = padded_len + k_len - 1;
                    std::vector<double> dext(c_out * ext_len, 0.0);
                    std::vector<double> wrev(k_len);
                    for (std::size_t b = 0; b < batch; ++b) {
                        for (std::size_t co = 0; co < c_out; ++co) {
                            const double* drow = dout + (b * c_out + co) * l_out;
                            std::copy(drow, drow + l_out, dext.data() + co * ext_len + k_len - 1);
                        }
                        std::fill(dpad.begin(), dpad.end(), 0.0);
                        // blocks of input channels share each extended
                        // gradient row while it is cache-hot
                        constexpr std::size_t kCiBlock = 4;
                        for (std::size_t ci0 = 0; ci0 < c_in; ci0 += kCiBlock) {
                            const std::size_t cb = std::min(kCiBlock, c_in - ci0);
                            for (std::size_t co = 0; co < c_out; ++co) {
                                const double* drow_ext = dext.data() + co * ext_len;
                                for (std::size_t j = 0; j < cb; ++j) {
                                    const std::size_t ci = ci0 + j;
                                    const double* wr = w->data.data() + (co * c_in + ci) * k_len;
                                    for (std::size_t k = 0; k < k_len; ++k) {
                                        wrev[k] = wr[k_len - 1 - k];
                                    }
                                    conv_input_grad_row(drow_ext, wrev.data(),
                                                        dpad.data() + ci * padded_len, k_len,
                                                        padded_len);
                                }
                            }
                        }
                        double* din = in->grad.data() + b * c_in * len;
                        for (std::size_t ci = 0; ci < c_in; ++ci) {
                            axpy(1.0, dpad.data() + ci * padded_len + padding, din + ci * len, len);
                        }
                    }
                } else {
                    for (std::size_t b = 0; b < batch; ++b) {
                        std::fill(dpad.begin(), dpad.end(), 0.0);
                        for (std::size_t ci = 0; ci < c_in; ++ci) {
                            double* dpr = dpad.data() + ci * padded_len;
                            for (std::size_t co = 0; co < c_out; ++co) {
                                const double* drow = dout + (b * c_out + co) * l_out;
                                const double* wr = w->data.data() + (co * c_in + ci) * k_len;
                                for (std::size_t k = 0; k < k_len; ++k) {
                                    for (std::size_t l = 0; l < l_out; ++l) {
                                        dpr[l * stride + k] =
                                            std::fma(wr[k], drow[l], dpr[l * stride + k]);
                                    }
                                }
                            }
                        }
                        double* din = in->grad.data() + b * c_in * len;
                        for (std::size_t ci = 0; ci < c_in; ++ci) {
                            axpy(1.0, dpad.data() + ci * padded_len + padding, din + ci * len, len);
                        }
                    }
                }
            }
            // grad w.r.t. weights and bias
            if (w->requires_grad || bi->requires_grad) {
                if (w->requires_grad) w->ensure_grad();
                if (bi->requires_grad) bi->ensure_grad();
                std::vector<double> padbuf(c_in * padded_len);
                constexpr std::size_t kCoBlock = 4;
                for (std::size_t b = 0; b < batch; ++b) {
                    pad_rows(in->data.data() + b * c_in * len, padbuf.data(), c_in, len, padding);
                    if (bi->requires_grad) {
                        for (std::size_t co = 0; co < c_out; ++co) {
                            const double* drow = dout + (b * c_out + co) * l_out;
                            double s = 0.0;
                            for (std::size_t l = 0; l < l_out; ++l) s += drow[l];
                            bi->grad[co] += s;
                        }
                    }
                    if (w->requires_grad) {
                        for (std::size_t co0 = 0; co0 < c_out; co0 += kCoBlock) {
                            const std::size_t cb = std::min(kCoBlock, c_out - co0);
                            for (std::size_t ci = 0; ci < c_in; ++ci) {
                                const double* in_row = padbuf.data() + ci * padded_len;
                                for (std::size_t j = 0; j < cb; ++j) {
                                    const std::size_t co = co0 + j;
                                    conv_weight_grad_rows(dout + (b * c_out + co) * l_out, in_row,
                                                          w->grad.data() + (co * c_in + ci) * k_len,
                                                          k_len, stride, l_out);
                                }
                            }
                        }
                    }
                }
            }
        };
    }
    return out;
}

TensorPtr maxpool1d(const TensorPtr& input, std::size_t window, std::size_t stride) {
    require_rank(input, 3, "maxpool1d", "input");
    require(window >= 1 && stride >= 1, "maxpool1d: window and stride must be >= 1");
    const std::size_t batch = input->shape[0];
    const std::size_t channels = input->shape[1];
    const std::size_t len = input->shape[2];
    require(len >= window, "maxpool1d: input length " + std::to_string(len) +
                               " shorter than window " + std::to_string(window));
    const std::size_t l_out = (len - window) / stride + 1;

    auto out = Tensor::create({batch, channels, l_out});
    auto argmax = std::make_shared<std::vector<std::size_t>>(batch * channels * l_out);
    const std::size_t rows = batch * channels;
    for (std::size_t r = 0; r < rows; ++r) {
        const double* in_row = input->data.data() + r * len;
        double* out_row = out->data.data() + r * l_out;
        std::size_t* arg_row = argmax->data() + r * l_out;
        for (std::size_t l = 0; l < l_out; ++l) {
            std::size_t best = l * stride;
            double best_v = in_row[best];
            for (std::size_t k = 1; k < window; ++k) {
                const double v = in_row[l * stride + k];
                if (v > best_v) {  // strict: ties keep the first index
                    best_v = v;
                    best = l * stride + k;
                }
            }
            out_row[l] = best_v;
            arg_row[l] = best;
        }
    }

    if (input->requires_grad) {
        out->requires_grad = true;
        out->parents = {input};
        TensorPtr in = input;
        Tensor* o = out.get();
        out->backward_fn = [in, o, argmax, rows, len, l_out]() {
            in->ensure_grad();
            for (std::size_t r = 0; r < rows; ++r) {
                const double* drow = o->grad.data() + r * l_out;
                double* din = in->grad.data() + r * len;
                const std::size_t* arg_row = argmax->data() + r * l_out;
                for (std::size_t l = 0; l < l_out; ++l) din[arg_row[l]] += drow[l];
            }
        };
    }
    return out;
}

TensorPtr relu(const TensorPtr& input) {
    if (!input) throw std::invalid_argument("relu: null input");
    auto out = Tensor::create(input->shape);
    const std::size_t n = input->size();
    for (std::size_t i = 0; i < n; ++i) {
        const double v = input->data[i];
        out->data[i] = v > 0.0 ? v : 0.0;
    }
    if (input->requires_grad) {
        out->requires_grad = true;
        out->parents = {input};
        TensorPtr in = input;
        Tensor* o = out.get();
        out->backward_fn = [in, o, n]() {
            in->ensure_grad();
            const double* __restrict x = in->data.data();
            const double* __restrict dy = o->grad.data();
            double* __restrict dx = in->grad.data();
            for (std::size_t i = 0; i < n; ++i) dx[i] += x[i] > 0.0 ? dy[i] : 0.0;
        };
    }
    return out;
}

TensorPtr dense(const TensorPtr& input, const TensorPtr& weights, const TensorPtr& bias) {
    require_rank(input, 2, "dense", "input");
    require_rank(weights, 2, "dense", "weights");
    require_rank(bias, 1, "dense", "bias");
    const std::size_t batch = input->shape[0];
    const std::size_t n = input->shape[1];
    const std::size_t m = weights->shape[0];
    require(weights->shape[1] == n, "dense: weight inner dim " + std::to_string(weights->shape[1]) +
                                        " != input dim " + std::to_string(n));
    require(bias->shape[0] == m, "dense: bias dim " + std::to_string(bias->shape[0]) +
                                     " != output dim " + std::to_string(m));

    auto out = Tensor::create({batch, m});
    for (std::size_t b = 0; b < batch; ++b) {
        const double* x = input->data.data() + b * n;
        double* y = out->data.data() + b * m;
        for (std::size_t j = 0; j < m; ++j) {
            y[j] = bias->data[j] + dot(weights->data.data() + j * n, x, n);
        }
    }

    if (any_requires_grad({&input, &weights, &bias})) {
        out->requires_grad = true;
        out->parents = {input, weights, bias};
        TensorPtr in = input, w = weights, bi = bias;
        Tensor* o = out.get();
        out->backward_fn = [in, w, bi, o, batch, n, m]() {
            const double* dout = o->grad.data();
            if (in->requires_grad) {
                in->ensure_grad();
                for (std::size_t b = 0; b < batch; ++b) {
                    const double* dy = dout + b * m;
                    double* dx = in->grad.data() + b * n;
                    for (std::size_t j = 0; j < m; ++j) {
                        axpy(dy[j], w->data.data() + j * n, dx, n);
                    }
                }
            }
            if (w->requires_grad) {
                w->ensure_grad();
                for (std::size_t b = 0; b < batch; ++b) {
                    const double* dy = dout + b * m;
                    const double* x = in->data.data() + b * n;
                    for (std::size_t j = 0; j < m; ++j) {
                        axpy(dy[j], x, w->grad.data() + j * n, n);
                    }
                }
            }
            if (bi->requires_grad) {
                bi->ensure_grad();
                for (std::size_t b = 0; b < batch; ++b) {
                    const double* dy = dout + b * m;
                    for (std::size_t j = 0; j < m; ++j) bi->grad[j] += dy[j];
                }
            }
        };
    }
    return out;
}

TensorPtr flatten(const TensorPtr& input) {
    if (!input) throw std::invalid_argument("flatten: null input");
    require(input->rank() >= 2, "flatten: input rank must be >= 2, got " + input->shape_str());
    const std::size_t batch = input->shape[0];
    const std::size_t rest = input->size() / batch;
    auto out = Tensor::create({batch, rest});
    out->data = input->data;
    if (input->requires_grad) {
        out->requires_grad = true;
        out->parents = {input};
        TensorPtr in = input;
        Tensor* o = out.get();
        out->backward_fn = [in, o]() {
            in->ensure_grad();
            const std::size_t n = in->size();
            for (std::size_t i = 0; i < n; ++i) in->grad[i] += o->grad[i];
        };
    }
    return out;
}

TensorPtr softmax_cross_entropy(const TensorPtr& logits, const std::vector<int>& labels) {
    require_rank(logits, 2, "softmax_cross_entropy", "logits");
    const std::size_t batch = logits->shape[0];
    const std::size_t k = logits->shape[1];
    require(labels.size() == batch, "softmax_cross_entropy: " + std::to_string(labels.size()) +
                                        " labels for batch of " + std::to_string(batch));
    for (std::size_t b = 0; b < batch; ++b) {
        if (labels[b] < 0 || static_cast<std::size_t>(labels[b]) >= k) {
            throw std::invalid_argument("softmax_cross_entropy: label " +
                                        std::to_string(labels[b]) + " at row " + std::to_string(b) +
                                        " outside [0," + std::to_string(k) + ")");
        }
    }

    auto probs = std::make_shared<std::vector<double>>(batch * k);
    double loss_sum = 0.0;
    for (std::size_t b = 0; b < batch; ++b) {
        const double* row = logits->data.data() + b * k;
        double* prow = probs->data() + b * k;
        double mx = row[0];
        for (std::size_t j = 1; j < k; ++j) mx = std::max(mx, row[j]);
        double denom = 0.0;
        for (std::size_t j = 0; j < k; ++j) {
            prow[j] = std::exp(row[j] - mx);
            denom += prow[j];
        }
        for (std::size_t j = 0; j < k; ++j) prow[j] /= denom;
        // log prob computed in shifted space; log of a normalized probability
        // would underflow to -inf for strongly wrong labels
        const std::size_t truth = static_cast<std::size_t>(labels[b]);
        loss_sum += -(row[truth] - mx - std::log(denom));
    }

    auto loss = Tensor::scalar(loss_sum / static_cast<double>(batch));
    if (logits->requires_grad) {
        loss->requires_grad = true;
        loss->parents = {logits};
        TensorPtr lg = logits;
        Tensor* l = loss.get();
        auto lb = labels;
        loss->backward_fn = [lg, l, probs, lb, batch, k]() {
            lg->ensure_grad();
            const double scale = l->grad[0] / static_cast<double>(batch);
            for (std::size_t b = 0; b < batch; ++b) {
                const double* prow = probs->data() + b * k;
                double* drow = lg->grad.data() + b * k;
                for (std::size_t j = 0; j < k; ++j) drow[j] += scale * prow[j];
                drow[static_cast<std::size_t>(lb[b])] -= scale;
            }
        };
    }
    return loss;
}

std::vector<double> softmax_rows(const TensorPtr& logits) {
    require_rank(logits, 2, "softmax_rows", "logits");
    const std::size_t batch = logits->shape[0];
    const std::size_t k = logits->shape[1];
    std::vector<double> probs(batch * k);
    for (std::size_t b = 0; b < batch; ++b) {
        const double* row = logits->data.data() + b * k;
        double* prow = probs.data() + b * k;
        double mx = row[0];
        for (std::size_t j = 1; j < k; ++j) mx = std::max(mx, row[j]);
        double denom = 0.0;
        for (std::size_t j = 0; j < k; ++j) {
            prow[j] = std::exp(row[j] - mx);
            denom += prow[j];
        }
        for (std::size_t j = 0; j < k; ++j) prow[j] /= denom;
    }
    return probs;
}

TensorPtr weighted_sum(const TensorPtr& x, const std::vector<double>& coeffs) {
    if (!x) throw std::invalid_argument("weighted_sum: null input");
    require(coeffs.size() == x->size(), "weighted_sum: " + std::to_string(coeffs.size()) +
                                            " coefficients for tensor of size " +
                                            std::to_string(x->size()));
    double s = 0.0;
    for (std::size_t i = 0; i < coeffs.size(); ++i) s += coeffs[i] * x->data[i];
    auto out = Tensor::scalar(s);
    if (x->requires_grad) {
        out->requires_grad = true;
        out->parents = {x};
        TensorPtr in = x;
        Tensor* o = out.get();
        auto c = coeffs;
        out->backward_fn = [in, o, c]() {
            in->ensure_grad();
            const double d = o->grad[0];
            for (std::size_t i = 0; i < c.size(); ++i) in->grad[i] += d * c[i];
        };
    }
    return out;
}

TensorPtr mul(const TensorPtr& a, const TensorPtr& b) {
    if (!a || !b) throw std::invalid_argument("mul: null input");
    require(a->shape == b->shape,
            "mul: shape mismatch " + a->shape_str() + " vs " + b->shape_str());
    auto out = Tensor::create(a->shape);
    const std::size_t n = a->size();
    for (std::size_t i = 0; i < n; ++i) out->data[i] = a->data[i] * b->data[i];
    if (any_requires_grad({&a, &b})) {
        out->requires_grad = true;
        out->parents = {a, b};
        TensorPtr ta = a, tb = b;
        Tensor* o = out.get();
        out->backward_fn = [ta, tb, o, n]() {
            if (ta->requires_grad) {
                ta->ensure_grad();
                for (std::size_t i = 0; i < n; ++i) ta->grad[i] += o->grad[i] * tb->data[i];
            }
            if (tb->requires_grad) {
                tb->ensure_grad();
                for (std::size_t i = 0; i < n; ++i) tb->grad[i] += o->grad[i] * ta->data[i];
            }
        };
    }
    return out;
}

TensorPtr sum_all(const TensorPtr& x) {
    if (!x) throw std::invalid_argument("sum_all: null input");
    return weighted_sum(x, std::vector<double>(x->size(), 1.0));
}

}  // namespace har
