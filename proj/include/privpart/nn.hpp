#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <sstream>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "privpart/rng.hpp"

namespace privpart {

// Two desk-scale classifier families over multi-slot feature vectors.
//
// FlatDense concatenates every modality slot (absent slots stay zero) and
// runs a tanh MLP, so its capacity grows with the slot count. TokenPooling
// encodes each present slot with one shared tanh MLP, mean-pools the
// embeddings over present slots and applies a linear classifier; its
// parameter count is independent of the slot count.
enum class ArchKind { FlatDense, TokenPooling };

struct Architecture {
    ArchKind kind = ArchKind::FlatDense;
    int input_width = 8;     // features per modality slot
    int max_modalities = 3;  // slots carried by each sample
    std::vector<int> hidden = {16};
    int num_classes = 6;

    bool valid() const {
        if (input_width < 1 || max_modalities < 1 || num_classes < 1) return false;
        for (int h : hidden)
            if (h < 1) return false;
        return true;
    }

    std::string id() const {
        std::ostringstream os;
        os << (kind == ArchKind::FlatDense ? "flat-dense" : "token-pooling");
        os << ":w" << input_width << ":m" << max_modalities << ":h";
        for (std::size_t i = 0; i < hidden.size(); ++i) os << (i ? "-" : "") << hidden[i];
        if (hidden.empty()) os << "0";
        os << ":c" << num_classes;
        return os.str();
    }
};

// Flat model weights, the unit exchanged by the federation. Layout is the
// layer sequence of the architecture, each layer as row-major W (out x in)
// followed by its bias. TokenPooling orders the shared encoder layers first,
// then the classifier.
struct ParamVector {
    std::string arch_id;
    std::vector<double> values;
};

inline bool all_finite(const ParamVector& p) {
    return std::all_of(p.values.begin(), p.values.end(),
                       [](double v) { return std::isfinite(v); });
}

namespace detail {

struct LayerShape {
    int in = 0;
    int out = 0;
    std::size_t w_off = 0;  // offset of W in the flat vector
    std::size_t b_off = 0;  // offset of b
};

// Layer sequence of an architecture. For TokenPooling the last entry is the
// classifier; everything before it is the shared per-slot encoder.
inline std::vector<LayerShape> layer_shapes(const Architecture& a) {
    std::vector<std::pair<int, int>> dims;
    if (a.kind == ArchKind::FlatDense) {
        int prev = a.input_width * a.max_modalities;
        for (int h : a.hidden) {
            dims.emplace_back(prev, h);
            prev = h;
        }
        dims.emplace_back(prev, a.num_classes);
    } else {
        int prev = a.input_width;
        for (int h : a.hidden) {
            dims.emplace_back(prev, h);
            prev = h;
        }
        dims.emplace_back(prev, a.num_classes);
    }
    std::vector<LayerShape> shapes;
    std::size_t off = 0;
    for (auto [in, out] : dims) {
        LayerShape s;
        s.in = in;
        s.out = out;
        s.w_off = off;
        off += static_cast<std::size_t>(in) * out;
        s.b_off = off;
        off += static_cast<std::size_t>(out);
        shapes.push_back(s);
    }
    return shapes;
}

}  // namespace detail

inline std::size_t param_count(const Architecture& arch) {
    if (!arch.valid()) throw std::invalid_argument("param_count: invalid architecture");
    std::size_t n = 0;
    for (const auto& s : detail::layer_shapes(arch))
        n += static_cast<std::size_t>(s.in) * s.out + s.out;
    return n;
}

// Fan-based uniform init, biases zero. Weights are drawn layer by layer in
// row-major order from one splitmix64 stream, so (arch, seed) pins the model
// bit for bit.
inline ParamVector init_model(const Architecture& arch, std::uint64_t seed) {
    if (!arch.valid()) throw std::invalid_argument("init_model: invalid architecture");
    ParamVector p;
    p.arch_id = arch.id();
    p.values.assign(param_count(arch), 0.0);
    SplitMix64 rng(seed);
    for (const auto& s : detail::layer_shapes(arch)) {
        const double bound = std::sqrt(6.0 / (s.in + s.out));
        for (std::size_t i = 0; i < static_cast<std::size_t>(s.in) * s.out; ++i)
            p.values[s.w_off + i] = (2.0 * rng.next_double() - 1.0) * bound;
        // biases stay zero
    }
    return p;
}

// A batch of samples in the layout the models consume: rows x slots x width
// features with absent slots zeroed, plus a presence flag per slot.
struct Batch {
    int rows = 0;
    int slots = 0;
    int width = 0;
    std::vector<double> features;        // rows * slots * width
    std::vector<std::uint8_t> present;   // rows * slots
    std::vector<int> labels;             // rows; may be empty for inference

    const double* row_slot(int r, int s) const {
        return features.data() + (static_cast<std::size_t>(r) * slots + s) * width;
    }
    bool is_present(int r, int s) const {
        return present[static_cast<std::size_t>(r) * slots + s] != 0;
    }
};

namespace detail {

inline void check_params(const Architecture& arch, const ParamVector& params,
                         const char* where) {
    if (params.arch_id != arch.id())
        throw std::invalid_argument(std::string(where) + ": parameter/architecture mismatch");
    if (params.values.size() != param_count(arch))
        throw std::invalid_argument(std::string(where) + ": parameter count mismatch");
}

inline void check_batch(const Architecture& arch, const Batch& batch, const char* where) {
    if (batch.rows < 1) throw std::invalid_argument(std::string(where) + ": empty batch");
    if (batch.slots != arch.max_modalities || batch.width != arch.input_width)
        throw std::invalid_argument(std::string(where) +
                                    ": batch feature shape does not match architecture");
    const std::size_t n = static_cast<std::size_t>(batch.rows);
    if (batch.features.size() != n * batch.slots * batch.width ||
        batch.present.size() != n * batch.slots)
        throw std::invalid_argument(std::string(where) + ": inconsistent batch buffers");
    if (!batch.labels.empty() && batch.labels.size() != n)
        throw std::invalid_argument(std::string(where) + ": label count mismatch");
}

inline double tanh_clip(double x) { return std::tanh(x); }

// y = W x + b for one layer
inline void affine(const LayerShape& s, const std::vector<double>& p, const double* x,
                   double* y) {
    for (int o = 0; o < s.out; ++o) {
        double acc = p[s.b_off + o];
        const double* w = p.data() + s.w_off + static_cast<std::size_t>(o) * s.in;
        for (int i = 0; i < s.in; ++i) acc += w[i] * x[i];
        y[o] = acc;
    }
}

// Per-row forward state kept for backprop. acts[l] is the post-activation
// output of layer l-1 (acts[0] is the input); the last entry holds logits.
struct RowTrace {
    std::vector<std::vector<double>> acts;
};

// tanh_last selects whether the final layer is an activation layer (the
// shared encoder) or a linear head (logits).
inline void run_stack(const std::vector<LayerShape>& shapes, const std::vector<double>& p,
                      std::vector<double> input, RowTrace& trace, bool tanh_last) {
    trace.acts.clear();
    trace.acts.push_back(std::move(input));
    for (std::size_t l = 0; l < shapes.size(); ++l) {
        std::vector<double> out(static_cast<std::size_t>(shapes[l].out));
        affine(shapes[l], p, trace.acts.back().data(), out.data());
        if (tanh_last || l + 1 < shapes.size())
            for (double& v : out) v = tanh_clip(v);
        trace.acts.push_back(std::move(out));
    }
}

// Backprop through a tanh stack given d(loss)/d(last pre-activation).
// Accumulates parameter gradients; returns nothing for the input gradient
// (inputs are data, not parameters).
inline void backprop_stack(const std::vector<LayerShape>& shapes, const std::vector<double>& p,
                           const RowTrace& trace, std::vector<double> delta,
                           std::vector<double>& grad) {
    for (std::size_t l = shapes.size(); l-- > 0;) {
        const LayerShape& s = shapes[l];
        const std::vector<double>& a_in = trace.acts[l];
        for (int o = 0; o < s.out; ++o) {
            const double d = delta[o];
            double* gw = grad.data() + s.w_off + static_cast<std::size_t>(o) * s.in;
            for (int i = 0; i < s.in; ++i) gw[i] += d * a_in[i];
            grad[s.b_off + o] += d;
        }
        if (l == 0) break;
        std::vector<double> prev(static_cast<std::size_t>(s.in), 0.0);
        for (int i = 0; i < s.in; ++i) {
            double acc = 0.0;
            for (int o = 0; o < s.out; ++o)
                acc += delta[o] * p[s.w_off + static_cast<std::size_t>(o) * s.in + i];
            prev[i] = acc * (1.0 - a_in[i] * a_in[i]);  // tanh'
        }
        delta = std::move(prev);
    }
}

}  // namespace detail

// Logits for a batch, row-major rows x num_classes. FlatDense ignores the
// presence mask (absent slots are zero in the features); TokenPooling pools
// only present slots and rejects rows with none.
inline std::vector<double> forward(const Architecture& arch, const ParamVector& params,
                                   const Batch& batch) {
    detail::check_params(arch, params, "forward");
    detail::check_batch(arch, batch, "forward");
    const auto shapes = detail::layer_shapes(arch);
    const int classes = arch.num_classes;
    std::vector<double> logits(static_cast<std::size_t>(batch.rows) * classes);

    if (arch.kind == ArchKind::FlatDense) {
        detail::RowTrace trace;
        for (int r = 0; r < batch.rows; ++r) {
            std::vector<double> x(batch.features.begin() +
                                      static_cast<std::size_t>(r) * batch.slots * batch.width,
                                  batch.features.begin() +
                                      static_cast<std::size_t>(r + 1) * batch.slots * batch.width);
            detail::run_stack(shapes, params.values, std::move(x), trace, false);
            std::copy(trace.acts.back().begin(), trace.acts.back().end(),
                      logits.begin() + static_cast<std::size_t>(r) * classes);
        }
        return logits;
    }

    // TokenPooling: encoder = all layers but the last, classifier = last.
    std::vector<detail::LayerShape> enc(shapes.begin(), shapes.end() - 1);
    const detail::LayerShape& cls = shapes.back();
    detail::RowTrace trace;
    for (int r = 0; r < batch.rows; ++r) {
        std::vector<double> pooled(static_cast<std::size_t>(cls.in), 0.0);
        int n_present = 0;
        for (int s = 0; s < batch.slots; ++s) {
            if (!batch.is_present(r, s)) continue;
            ++n_present;
            std::vector<double> x(batch.row_slot(r, s), batch.row_slot(r, s) + batch.width);
            if (enc.empty()) {
                for (int i = 0; i < cls.in; ++i) pooled[i] += x[i];
            } else {
                detail::run_stack(enc, params.values, std::move(x), trace, true);
                const auto& h = trace.acts.back();
                for (int i = 0; i < cls.in; ++i) pooled[i] += h[i];
            }
        }
        if (n_present == 0)
            throw std::invalid_argument("forward: token-pooling row with no present slot");
        for (double& v : pooled) v /= n_present;
        detail::affine(cls, params.values, pooled.data(),
                       logits.data() + static_cast<std::size_t>(r) * classes);
    }
    return logits;
}

// Max-shifted softmax over one logit vector.
inline std::vector<double> softmax(const std::vector<double>& logits) {
    if (logits.empty()) throw std::invalid_argument("softmax: empty input");
    const double m = *std::max_element(logits.begin(), logits.end());
    std::vector<double> out(logits.size());
    double z = 0.0;
    for (std::size_t i = 0; i < logits.size(); ++i) {
        out[i] = std::exp(logits[i] - m);
        z += out[i];
    }
    for (double& v : out) v /= z;
    return out;
}

// Row-wise softmax over a rows x cols logit matrix.
inline std::vector<double> softmax_rows(const std::vector<double>& logits, int rows, int cols) {
    if (rows < 1 || cols < 1 ||
        logits.size() != static_cast<std::size_t>(rows) * cols)
        throw std::invalid_argument("softmax_rows: shape mismatch");
    std::vector<double> out(logits.size());
    for (int r = 0; r < rows; ++r) {
        const double* lr = logits.data() + static_cast<std::size_t>(r) * cols;
        double m = lr[0];
        for (int c = 1; c < cols; ++c) m = std::max(m, lr[c]);
        double z = 0.0;
        double* orow = out.data() + static_cast<std::size_t>(r) * cols;
        for (int c = 0; c < cols; ++c) {
            orow[c] = std::exp(lr[c] - m);
            z += orow[c];
        }
        for (int c = 0; c < cols; ++c) orow[c] /= z;
    }
    return out;
}

inline constexpr double kProbClamp = 1e-12;

// Mean over the batch of -ln p[label], probabilities clamped at 1e-12.
inline double cross_entropy(const std::vector<double>& probs, int rows, int cols,
                            const std::vector<int>& labels) {
    if (rows < 1 || cols < 1 || probs.size() != static_cast<std::size_t>(rows) * cols)
        throw std::invalid_argument("cross_entropy: shape mismatch");
    if (labels.size() != static_cast<std::size_t>(rows))
        throw std::invalid_argument("cross_entropy: label count mismatch");
    double acc = 0.0;
    for (int r = 0; r < rows; ++r) {
        const int y = labels[r];
        if (y < 0 || y >= cols) throw std::invalid_argument("cross_entropy: label out of range");
        acc += -std::log(std::max(probs[static_cast<std::size_t>(r) * cols + y], kProbClamp));
    }
    return acc / rows;
}

// KL(p || q) = sum p_i ln(p_i / q_i), q clamped at 1e-12. Zero p entries
// contribute zero.
inline double kl_divergence(const std::vector<double>& p, const std::vector<double>& q) {
    if (p.size() != q.size() || p.empty())
        throw std::invalid_argument("kl_divergence: size mismatch");
    double acc = 0.0;
    for (std::size_t i = 0; i < p.size(); ++i) {
        if (p[i] <= 0.0) continue;
        acc += p[i] * std::log(p[i] / std::max(q[i], kProbClamp));
    }
    return acc;
}

// Loss selector for loss_and_grad. Plain is cross-entropy; the mutual form
// adds lambda * KL(peer || own) per sample, with the peer's probability rows
// treated as constants.
struct LossSpec {
    bool mutual = false;
    double lambda = 0.0;
    const std::vector<double>* peer_probs = nullptr;  // rows x num_classes

    static LossSpec plain_ce() { return {}; }
    static LossSpec mutual_ce_kl(double lambda, const std::vector<double>& peer) {
        LossSpec s;
        s.mutual = true;
        s.lambda = lambda;
        s.peer_probs = &peer;
        return s;
    }
};

struct LossGrad {
    double loss = 0.0;
    std::vector<double> grad;
};

// Batch loss and its analytic gradient with respect to params.
//
// d/dlogits of the CE term is (p - onehot)/rows; the KL(peer || own) term
// adds lambda * (p - peer)/rows. Everything else is plain backprop through
// the tanh stacks. When lambda is zero the KL term is skipped outright so
// the result matches the plain path bit for bit.
inline LossGrad loss_and_grad(const Architecture& arch, const ParamVector& params,
                              const Batch& batch, const LossSpec& spec) {
    detail::check_params(arch, params, "loss_and_grad");
    detail::check_batch(arch, batch, "loss_and_grad");
    if (batch.labels.size() != static_cast<std::size_t>(batch.rows))
        throw std::invalid_argument("loss_and_grad: batch carries no labels");
    const int classes = arch.num_classes;
    for (int y : batch.labels)
        if (y < 0 || y >= classes)
            throw std::invalid_argument("loss_and_grad: label out of range");
    if (spec.mutual) {
        if (spec.peer_probs == nullptr)
            throw std::invalid_argument("loss_and_grad: mutual loss needs peer probabilities");
        if (spec.peer_probs->size() != static_cast<std::size_t>(batch.rows) * classes)
            throw std::invalid_argument("loss_and_grad: peer probability shape mismatch");
    }
    const bool use_kl = spec.mutual && spec.lambda != 0.0;

    const auto shapes = detail::layer_shapes(arch);
    LossGrad out;
    out.grad.assign(params.values.size(), 0.0);

    const auto logits = forward(arch, params, batch);
    const auto probs = softmax_rows(logits, batch.rows, classes);

    out.loss = cross_entropy(probs, batch.rows, classes, batch.labels);
    if (use_kl) {
        double kl_acc = 0.0;
        for (int r = 0; r < batch.rows; ++r) {
            std::vector<double> peer(spec.peer_probs->begin() + static_cast<std::size_t>(r) * classes,
                                     spec.peer_probs->begin() + static_cast<std::size_t>(r + 1) * classes);
            std::vector<double> own(probs.begin() + static_cast<std::size_t>(r) * classes,
                                    probs.begin() + static_cast<std::size_t>(r + 1) * classes);
            kl_acc += kl_divergence(peer, own);
        }
        out.loss += spec.lambda * kl_acc / batch.rows;
    }

    // d loss / d logits, per row
    std::vector<double> dlogits(static_cast<std::size_t>(batch.rows) * classes);
    const double inv_rows = 1.0 / batch.rows;
    for (int r = 0; r < batch.rows; ++r) {
        const std::size_t base = static_cast<std::size_t>(r) * classes;
        for (int c = 0; c < classes; ++c) {
            double d = probs[base + c];
            if (c == batch.labels[r]) d -= 1.0;
            if (use_kl) d += spec.lambda * (probs[base + c] - (*spec.peer_probs)[base + c]);
            dlogits[base + c] = d * inv_rows;
        }
    }

    if (arch.kind == ArchKind::FlatDense) {
        detail::RowTrace trace;
        for (int r = 0; r < batch.rows; ++r) {
            std::vector<double> x(batch.features.begin() +
                                      static_cast<std::size_t>(r) * batch.slots * batch.width,
                                  batch.features.begin() +
                                      static_cast<std::size_t>(r + 1) * batch.slots * batch.width);
            detail::run_stack(shapes, params.values, std::move(x), trace, false);
            std::vector<double> delta(dlogits.begin() + static_cast<std::size_t>(r) * classes,
                                      dlogits.begin() + static_cast<std::size_t>(r + 1) * classes);
            detail::backprop_stack(shapes, params.values, trace, std::move(delta), out.grad);
        }
        return out;
    }

    std::vector<detail::LayerShape> enc(shapes.begin(), shapes.end() - 1);
    const detail::LayerShape& cls = shapes.back();
    for (int r = 0; r < batch.rows; ++r) {
        // re-run the per-slot encoders, keeping each trace
        std::vector<detail::RowTrace> traces;
        std::vector<int> slots_present;
        std::vector<double> pooled(static_cast<std::size_t>(cls.in), 0.0);
        for (int s = 0; s < batch.slots; ++s) {
            if (!batch.is_present(r, s)) continue;
            slots_present.push_back(s);
            std::vector<double> x(batch.row_slot(r, s), batch.row_slot(r, s) + batch.width);
            if (enc.empty()) {
                for (int i = 0; i < cls.in; ++i) pooled[i] += x[i];
            } else {
                detail::RowTrace t;
                detail::run_stack(enc, params.values, std::move(x), t, true);
                const auto& h = t.acts.back();
                for (int i = 0; i < cls.in; ++i) pooled[i] += h[i];
                traces.push_back(std::move(t));
            }
        }
        const int n_present = static_cast<int>(slots_present.size());
        for (double& v : pooled) v /= n_present;

        const double* drow = dlogits.data() + static_cast<std::size_t>(r) * classes;
        // classifier grads and the pooled-embedding gradient
        std::vector<double> dpooled(static_cast<std::size_t>(cls.in), 0.0);
        for (int o = 0; o < cls.out; ++o) {
            const double d = drow[o];
            double* gw = out.grad.data() + cls.w_off + static_cast<std::size_t>(o) * cls.in;
            for (int i = 0; i < cls.in; ++i) {
                gw[i] += d * pooled[i];
                dpooled[i] += d * params.values[cls.w_off + static_cast<std::size_t>(o) * cls.in + i];
            }
            out.grad[cls.b_off + o] += d;
        }
        if (enc.empty()) continue;  // raw inputs pooled, nothing upstream to train
        for (int k = 0; k < n_present; ++k) {
            const auto& h = traces[k].acts.back();
            std::vector<double> delta(static_cast<std::size_t>(cls.in));
            for (int i = 0; i < cls.in; ++i)
                delta[i] = dpooled[i] / n_present * (1.0 - h[i] * h[i]);
            detail::backprop_stack(enc, params.values, traces[k], std::move(delta), out.grad);
        }
    }
    return out;
}

// Index of the largest logit; ties go to the lowest class index.
inline int argmax_row(const double* row, int n) {
    int best = 0;
    for (int c = 1; c < n; ++c)
        if (row[c] > row[best]) best = c;
    return best;
}

}  // namespace privpart
