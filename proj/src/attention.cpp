#include "har/attention.hpp"

#include <cmath>
#include <fstream>
#include <stdexcept>

namespace har {

namespace {

void require(bool cond, const std::string& msg) {
    if (!cond) throw std::invalid_argument(msg);
}

void check_local_global(const TensorPtr& local, const TensorPtr& global, const char* op) {
    if (!local || !global) throw std::invalid_argument(std::string(op) + ": null input");
    require(local->rank() == 3, std::string(op) + ": local features must be [B,C,n], got " +
                                    local->shape_str());
    require(global->rank() == 2, std::string(op) + ": global feature must be [B,C], got " +
                                     global->shape_str());
    require(local->shape[0] == global->shape[0],
            std::string(op) + ": batch mismatch " + local->shape_str() + " vs " + global->shape_str());
    require(local->shape[1] == global->shape[1],
            std::string(op) + ": local channel dim " + std::to_string(local->shape[1]) +
                " != global feature length " + std::to_string(global->shape[1]));
}

}  // namespace

std::string to_string(CompatMode m) { return m == CompatMode::Dot ? "dot" : "pc"; }
std::string to_string(NormMode m) { return m == NormMode::Softmax ? "sm" : "tanh"; }

CompatMode compat_mode_from_string(const std::string& s) {
    if (s == "dot") return CompatMode::Dot;
    if (s == "pc") return CompatMode::Pc;
    throw std::invalid_argument("unknown compatibility mode '" + s + "' (expected dot|pc)");
}

NormMode norm_mode_from_string(const std::string& s) {
    if (s == "sm" || s == "softmax") return NormMode::Softmax;
    if (s == "tanh") return NormMode::Tanh;
    throw std::invalid_argument("unknown normalization mode '" + s + "' (expected sm|tanh)");
}

TensorPtr compat_dot(const TensorPtr& local, const TensorPtr& global) {
    check_local_global(local, global, "compat_dot");
    const std::size_t batch = local->shape[0];
    const std::size_t channels = local->shape[1];
    const std::size_t n = local->shape[2];

    auto out = Tensor::create({batch, n});
    for (std::size_t b = 0; b < batch; ++b) {
        const double* lb = local->data.data() + b * channels * n;
        const double* gb = global->data.data() + b * channels;
        double* ob = out->data.data() + b * n;
        for (std::size_t c = 0; c < channels; ++c) {
            const double g = gb[c];
            const double* lr = lb + c * n;
            for (std::size_t i = 0; i < n; ++i) ob[i] = std::fma(g, lr[i], ob[i]);
        }
    }

    if (local->requires_grad || global->requires_grad) {
        out->requires_grad = true;
        out->parents = {local, global};
        TensorPtr l = local, g = global;
        Tensor* o = out.get();
        out->backward_fn = [l, g, o, batch, channels, n]() {
            for (std::size_t b = 0; b < batch; ++b) {
                const double* db = o->grad.data() + b * n;
                const double* lb = l->data.data() + b * channels * n;
                const double* gb = g->data.data() + b * channels;
                if (l->requires_grad) {
                    l->ensure_grad();
                    double* dl = l->grad.data() + b * channels * n;
                    for (std::size_t c = 0; c < channels; ++c) {
                        const double gv = gb[c];
                        double* row = dl + c * n;
                        for (std::size_t i = 0; i < n; ++i) row[i] = std::fma(gv, db[i], row[i]);
                    }
                }
                if (g->requires_grad) {
                    g->ensure_grad();
                    double* dg = g->grad.data() + b * channels;
                    for (std::size_t c = 0; c < channels; ++c) {
                        const double* lr = lb + c * n;
                        double s = 0.0;
                        for (std::size_t i = 0; i < n; ++i) s = std::fma(db[i], lr[i], s);
                        dg[c] += s;
                    }
                }
            }
        };
    }
    return out;
}

TensorPtr compat_pc(const TensorPtr& local, const TensorPtr& global, const TensorPtr& u) {
    check_local_global(local, global, "compat_pc");
    if (!u) throw std::invalid_argument("compat_pc: null u");
    require(u->rank() == 1 && u->shape[0] == local->shape[1],
            "compat_pc: u length " + u->shape_str() + " != feature length " +
                std::to_string(local->shape[1]));
    const std::size_t batch = local->shape[0];
    const std::size_t channels = local->shape[1];
    const std::size_t n = local->shape[2];

    auto out = Tensor::create({batch, n});
    for (std::size_t b = 0; b < batch; ++b) {
        const double* lb = local->data.data() + b * channels * n;
        const double* gb = global->data.data() + b * channels;
        double* ob = out->data.data() + b * n;
        double base = 0.0;  // <u, G>, shared by every location
        for (std::size_t c = 0; c < channels; ++c) base = std::fma(u->data[c], gb[c], base);
        for (std::size_t i = 0; i < n; ++i) ob[i] = base;
        for (std::size_t c = 0; c < channels; ++c) {
            const double uv = u->data[c];
            const double* lr = lb + c * n;
            for (std::size_t i = 0; i < n; ++i) ob[i] = std::fma(uv, lr[i], ob[i]);
        }
    }

    if (local->requires_grad || global->requires_grad || u->requires_grad) {
        out->requires_grad = true;
        out->parents = {local, global, u};
        TensorPtr l = local, g = global, uu = u;
        Tensor* o = out.get();
        out->backward_fn = [l, g, uu, o, batch, channels, n]() {
            for (std::size_t b = 0; b < batch; ++b) {
                const double* db = o->grad.data() + b * n;
                double dsum = 0.0;
                for (std::size_t i = 0; i < n; ++i) dsum += db[i];
                const double* lb = l->data.data() + b * channels * n;
                const double* gb = g->data.data() + b * channels;
                if (l->requires_grad) {
                    l->ensure_grad();
                    double* dl = l->grad.data() + b * channels * n;
                    for (std::size_t c = 0; c < channels; ++c) {
                        const double uv = uu->data[c];
                        double* row = dl + c * n;
                        for (std::size_t i = 0; i < n; ++i) row[i] = std::fma(uv, db[i], row[i]);
                    }
                }
                if (g->requires_grad) {
                    g->ensure_grad();
                    double* dg = g->grad.data() + b * channels;
                    for (std::size_t c = 0; c < channels; ++c) dg[c] += uu->data[c] * dsum;
                }
                if (uu->requires_grad) {
                    uu->ensure_grad();
                    for (std::size_t c = 0; c < channels; ++c) {
                        const double* lr = lb + c * n;
                        double s = gb[c] * dsum;
                        for (std::size_t i = 0; i < n; ++i) s = std::fma(db[i], lr[i], s);
                        uu->grad[c] += s;
                    }
                }
            }
        };
    }
    return out;
}

TensorPtr normalize_softmax(const TensorPtr& scores) {
    if (!scores) throw std::invalid_argument("normalize_softmax: null input");
    require(scores->rank() == 2 && scores->shape[1] >= 1,
            "normalize_softmax: scores must be [B,n] with n >= 1, got " + scores->shape_str());
    for (double v : scores->data) {
        if (!std::isfinite(v)) {
            throw std::invalid_argument("normalize_softmax: non-finite score");
        }
    }
    const std::size_t batch = scores->shape[0];
    const std::size_t n = scores->shape[1];

    auto out = Tensor::create({batch, n});
    for (std::size_t b = 0; b < batch; ++b) {
        const double* row = scores->data.data() + b * n;
        double* orow = out->data.data() + b * n;
        double mx = row[0];
        for (std::size_t i = 1; i < n; ++i) mx = std::max(mx, row[i]);
        double denom = 0.0;
        for (std::size_t i = 0; i < n; ++i) {
            orow[i] = std::exp(row[i] - mx);
            denom += orow[i];
        }
        for (std::size_t i = 0; i < n; ++i) orow[i] /= denom;
    }

    if (scores->requires_grad) {
        out->requires_grad = true;
        out->parents = {scores};
        TensorPtr s = scores;
        Tensor* o = out.get();
        out->backward_fn = [s, o, batch, n]() {
            s->ensure_grad();
            for (std::size_t b = 0; b < batch; ++b) {
                const double* a = o->data.data() + b * n;
                const double* da = o->grad.data() + b * n;
                double* ds = s->grad.data() + b * n;
                double dot = 0.0;
                for (std::size_t i = 0; i < n; ++i) dot += a[i] * da[i];
                for (std::size_t i = 0; i < n; ++i) ds[i] += a[i] * (da[i] - dot);
            }
        };
    }
    return out;
}

TensorPtr normalize_tanh(const TensorPtr& scores) {
    if (!scores) throw std::invalid_argument("normalize_tanh: null input");
    require(scores->rank() == 2, "normalize_tanh: scores must be [B,n], got " + scores->shape_str());
    auto out = Tensor::create(scores->shape);
    const std::size_t total = scores->size();
    for (std::size_t i = 0; i < total; ++i) out->data[i] = std::tanh(scores->data[i]);
    if (scores->requires_grad) {
        out->requires_grad = true;
        out->parents = {scores};
        TensorPtr s = scores;
        Tensor* o = out.get();
        out->backward_fn = [s, o, total]() {
            s->ensure_grad();
            for (std::size_t i = 0; i < total; ++i) {
                const double y = o->data[i];
                s->grad[i] += (1.0 - y * y) * o->grad[i];
            }
        };
    }
    return out;
}

TensorPtr attend_pool(const TensorPtr& local, const TensorPtr& weights) {
    if (!local || !weights) throw std::invalid_argument("attend_pool: null input");
    require(local->rank() == 3, "attend_pool: local features must be [B,C,n], got " +
                                    local->shape_str());
    require(weights->rank() == 2, "attend_pool: weights must be [B,n], got " + weights->shape_str());
    require(local->shape[0] == weights->shape[0] && local->shape[2] == weights->shape[1],
            "attend_pool: weight shape " + weights->shape_str() + " does not match locations of " +
                local->shape_str());
    const std::size_t batch = local->shape[0];
    const std::size_t channels = local->shape[1];
    const std::size_t n = local->shape[2];

    auto out = Tensor::create({batch, channels});
    for (std::size_t b = 0; b < batch; ++b) {
        const double* lb = local->data.data() + b * channels * n;
        const double* ab = weights->data.data() + b * n;
        double* ob = out->data.data() + b * channels;
        for (std::size_t c = 0; c < channels; ++c) {
            const double* lr = lb + c * n;
            double s = 0.0;
            for (std::size_t i = 0; i < n; ++i) s = std::fma(ab[i], lr[i], s);
            ob[c] = s;
        }
    }

    if (local->requires_grad || weights->requires_grad) {
        out->requires_grad = true;
        out->parents = {local, weights};
        TensorPtr l = local, a = weights;
        Tensor* o = out.get();
        out->backward_fn = [l, a, o, batch, channels, n]() {
            for (std::size_t b = 0; b < batch; ++b) {
                const double* dg = o->grad.data() + b * channels;
                const double* lb = l->data.data() + b * channels * n;
                const double* ab = a->data.data() + b * n;
                if (l->requires_grad) {
                    l->ensure_grad();
                    double* dl = l->grad.data() + b * channels * n;
                    for (std::size_t c = 0; c < channels; ++c) {
                        const double d = dg[c];
                        double* row = dl + c * n;
                        for (std::size_t i = 0; i < n; ++i) row[i] = std::fma(d, ab[i], row[i]);
                    }
                }
                if (a->requires_grad) {
                    a->ensure_grad();
                    double* da = a->grad.data() + b * n;
                    for (std::size_t c = 0; c < channels; ++c) {
                        const double d = dg[c];
                        const double* lr = lb + c * n;
                        for (std::size_t i = 0; i < n; ++i) da[i] = std::fma(d, lr[i], da[i]);
                    }
                }
            }
        };
    }
    return out;
}

TensorPtr concat_cols(const std::vector<TensorPtr>& parts) {
    require(!parts.empty(), "concat_cols: no inputs");
    const std::size_t batch = parts[0] ? parts[0]->shape[0] : 0;
    std::size_t total = 0;
    bool needs_grad = false;
    for (const TensorPtr& p : parts) {
        if (!p) throw std::invalid_argument("concat_cols: null input");
        require(p->rank() == 2 && p->shape[0] == batch,
                "concat_cols: all parts must be [B,*] with equal batch, got " + p->shape_str());
        total += p->shape[1];
        needs_grad = needs_grad || p->requires_grad;
    }

    auto out = Tensor::create({batch, total});
    std::size_t offset = 0;
    for (const TensorPtr& p : parts) {
        const std::size_t w = p->shape[1];
        for (std::size_t b = 0; b < batch; ++b) {
            const double* src = p->data.data() + b * w;
            double* dst = out->data.data() + b * total + offset;
            std::copy(src, src + w, dst);
        }
        offset += w;
    }

    if (needs_grad) {
        out->requires_grad = true;
        out->parents = parts;
        Tensor* o = out.get();
        auto ps = parts;
        out->backward_fn = [ps, o, batch, total]() {
            std::size_t off = 0;
            for (const TensorPtr& p : ps) {
                const std::size_t w = p->shape[1];
                if (p->requires_grad) {
                    p->ensure_grad();
                    for (std::size_t b = 0; b < batch; ++b) {
                        const double* src = o->grad.data() + b * total + off;
                        double* dst = p->grad.data() + b * w;
                        for (std::size_t i = 0; i < w; ++i) dst[i] += src[i];
                    }
                }
                off += w;
            }
        };
    }
    return out;
}

void write_attention_csv(const std::string& path, const std::vector<CompatibilityProfile>& profiles) {
    std::ofstream out(path);
    if (!out) throw std::runtime_error("write_attention_csv: cannot open " + path);
    out << "level,index,score,weight\n";
    out.precision(17);
    for (const auto& p : profiles) {
        for (std::size_t i = 0; i < p.scores.size(); ++i) {
            out << p.level << ',' << i << ',' << p.scores[i] << ',' << p.weights[i] << '\n';
        }
    }
    if (!out) throw std::runtime_error("write_attention_csv: write failed for " + path);
}

}  // namespace har
