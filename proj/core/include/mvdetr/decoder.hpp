#pragma once

#include <array>
#include <vector>

#include "mvdetr/box.hpp"
#include "mvdetr/connector.hpp"

namespace mvdetr {

std::vector<int> farthest_point_sample(const std::vector<std::array<double, 3>>& points, int m);

// Size-normalized offsets of a point to the 8 canonical box vertices,
// computed in the box's canonical frame: p' = R(-yaw)(p - center), and
// offset block j = p'/size - signs_j/2 with the vertex sign order of
// Box3D::vertices(). Invariant under global vertical rotation+translation
// of point and box together.
inline std::array<double, 24> canonical_offsets(const Vec3& p, const Box3D& box) {
    box.validate();
    Vec3 local = rotate_yaw(p - box.center, -box.yaw);
    double w[3] = {local.x / box.size.x, local.y / box.size.y, local.z / box.size.z};
    std::array<double, 24> out;
    for (int j = 0; j < 8; ++j) {
        out[static_cast<std::size_t>(j) * 3 + 0] = w[0] - (j & 4 ? 0.5 : -0.5);
        out[static_cast<std::size_t>(j) * 3 + 1] = w[1] - (j & 2 ? 0.5 : -0.5);
        out[static_cast<std::size_t>(j) * 3 + 2] = w[2] - (j & 1 ? 0.5 : -0.5);
    }
    return out;
}

// Batched differentiable form over all (query box, point) pairs; output
// row m*N+n carries the 24 offsets of point n w.r.t. box m. Differentiable
// in center, size and yaw.
template <class T>
TensorT<T> canonical_offsets_batch(const std::vector<std::array<double, 3>>& points,
                                   const TensorT<T>& center, const TensorT<T>& size,
                                   const TensorT<T>& yaw) {
    int m = center.rows();
    int n = static_cast<int>(points.size());
    if (center.cols() != 3 || size.rows() != m || size.cols() != 3 || yaw.rows() != m)
        throw ContractError("canonical_offsets_batch: box tensor shape mismatch");
    auto node = detail::make_node<T>({m * n, 24}, static_cast<std::size_t>(m) * n * 24,
                                     "canonical_offsets", {center.ptr(), size.ptr(), yaw.ptr()});
    // cache p' per pair for the backward pass
    std::vector<T> plocal(static_cast<std::size_t>(m) * n * 3);
    for (int qi = 0; qi < m; ++qi) {
        T cx = center.data()[static_cast<std::size_t>(qi) * 3 + 0];
        T cy = center.data()[static_cast<std::size_t>(qi) * 3 + 1];
        T cz = center.data()[static_cast<std::size_t>(qi) * 3 + 2];
        T sx = size.data()[static_cast<std::size_t>(qi) * 3 + 0];
        T sy = size.data()[static_cast<std::size_t>(qi) * 3 + 1];
        T sz = size.data()[static_cast<std::size_t>(qi) * 3 + 2];
        T cosy = std::cos(yaw.data()[static_cast<std::size_t>(qi)]);
        T siny = std::sin(yaw.data()[static_cast<std::size_t>(qi)]);
        for (int pi = 0; pi < n; ++pi) {
            T dx = static_cast<T>(points[static_cast<std::size_t>(pi)][0]) - cx;
            T dy = static_cast<T>(points[static_cast<std::size_t>(pi)][1]) - cy;
            T dz = static_cast<T>(points[static_cast<std::size_t>(pi)][2]) - cz;
            // R(-yaw) about the vertical (y) axis
            T px = cosy * dx - siny * dz;
            T pz = siny * dx + cosy * dz;
            std::size_t base = (static_cast<std::size_t>(qi) * n + pi) * 3;
            plocal[base + 0] = px;
            plocal[base + 1] = dy;
            plocal[base + 2] = pz;
            T w0 = px / sx, w1 = dy / sy, w2 = pz / sz;
            T* out = node->value.data() + (static_cast<std::size_t>(qi) * n + pi) * 24;
            for (int j = 0; j < 8; ++j) {
                out[j * 3 + 0] = w0 - (j & 4 ? T(0.5) : T(-0.5));
                out[j * 3 + 1] = w1 - (j & 2 ? T(0.5) : T(-0.5));
                out[j * 3 + 2] = w2 - (j & 1 ? T(0.5) : T(-0.5));
            }
        }
    }
    detail::check_finite(*node);
    if (node->requires_grad) {
        auto pc = center.ptr(), ps = size.ptr(), py = yaw.ptr();
        node->backward_fn = [pc, ps, py, m, n, plocal = std::move(plocal)](TensorNode<T>& out) {
            if (pc->requires_grad) pc->ensure_grad();
            if (ps->requires_grad) ps->ensure_grad();
            if (py->requires_grad) py->ensure_grad();
            for (int qi = 0; qi < m; ++qi) {
                T sx = ps->value[static_cast<std::size_t>(qi) * 3 + 0];
                T sy = ps->value[static_cast<std::size_t>(qi) * 3 + 1];
                T sz = ps->value[static_cast<std::size_t>(qi) * 3 + 2];
                T cosy = std::cos(py->value[static_cast<std::size_t>(qi)]);
                T siny = std::sin(py->value[static_cast<std::size_t>(qi)]);
                for (int pi = 0; pi < n; ++pi) {
                    std::size_t row = static_cast<std::size_t>(qi) * n + pi;
                    const T* g = out.grad.data() + row * 24;
                    // fold the 8 vertex blocks into d/dw
                    T gw[3] = {T(0), T(0), T(0)};
                    for (int j = 0; j < 8; ++j)
                        for (int a = 0; a < 3; ++a) gw[a] += g[j * 3 + a];
                    T px = plocal[row * 3 + 0], pyv = plocal[row * 3 + 1], pz = plocal[row * 3 + 2];
                    // w = p'/s
                    T gpx = gw[0] / sx, gpy = gw[1] / sy, gpz = gw[2] / sz;
                    if (ps->requires_grad) {
                        ps->grad[static_cast<std::size_t>(qi) * 3 + 0] -= gw[0] * px / (sx * sx);
                        ps->grad[static_cast<std::size_t>(qi) * 3 + 1] -= gw[1] * pyv / (sy * sy);
                        ps->grad[static_cast<std::size_t>(qi) * 3 + 2] -= gw[2] * pz / (sz * sz);
                    }
                    if (pc->requires_grad) {
                        // dp'/dc = -R(-yaw)
                        pc->grad[static_cast<std::size_t>(qi) * 3 + 0] -= gpx * cosy + gpz * siny;
                        pc->grad[static_cast<std::size_t>(qi) * 3 + 1] -= gpy;
                        pc->grad[static_cast<std::size_t>(qi) * 3 + 2] -= -gpx * siny + gpz * cosy;
                    }
                    if (py->requires_grad) {
                        // dp'x/dyaw = -p'z, dp'z/dyaw = p'x
                        py->grad[static_cast<std::size_t>(qi)] += -gpx * pz + gpz * px;
                    }
                }
            }
        };
    }
    return TensorT<T>(std::move(node));
}

struct DecoderConfig {
    int num_queries = 16;   // M
    int layers = 3;         // L
    int content_dim = 64;
    int heads = 2;
    int rpe_hidden = 16;
    int ffn_hidden = 128;
    int num_classes = 4;    // C; logits have C+1 entries, last = no-object
    double default_size = 0.5;
};

// Learnable object queries: content vectors plus box state, all on tape.
template <class T>
struct QuerySetT {
    TensorT<T> content;  // M x D
    TensorT<T> center;   // M x 3
    TensorT<T> size;     // M x 3, strictly positive
    TensorT<T> yaw;      // M x 1
    TensorT<T> logits;   // M x (C+1); defined after the first layer
};

// DETR-style decoder with 3D vertex relative position encoding in the
// cross-attention of every layer. Deep supervision: forward() returns one
// QuerySet per layer.
template <class T>
class Decoder {
public:
    Decoder(ParamStore<T>& ps, const DecoderConfig& cfg, int fused_dim = 32) : cfg_(cfg) {
        int d = cfg.content_dim;
        content_proj_ = LinearLayer<T>::create(ps, "decoder.init.content", fused_dim, d);
        init_ffn1_ = LinearLayer<T>::create(ps, "decoder.init.ffn1", fused_dim, fused_dim);
        init_ffn2_ = LinearLayer<T>::create(ps, "decoder.init.ffn2", fused_dim, 8);
        for (int l = 0; l < cfg.layers; ++l) {
            std::string p = "decoder.layer" + std::to_string(l) + ".";
            Layer lay;
            lay.sa_q = LinearLayer<T>::create(ps, p + "self.q", d, d);
            lay.sa_k = LinearLayer<T>::create(ps, p + "self.k", d, d);
            lay.sa_v = LinearLayer<T>::create(ps, p + "self.v", d, d);
            lay.sa_o = LinearLayer<T>::create(ps, p + "self.out", d, d);
            lay.ln1 = LayerNormLayer<T>::create(ps, p + "ln1", d);
            lay.ca_q = LinearLayer<T>::create(ps, p + "cross.q", d, d);
            lay.ca_k = LinearLayer<T>::create(ps, p + "cross.k", fused_dim, d);
            lay.ca_v = LinearLayer<T>::create(ps, p + "cross.v", fused_dim, d);
            lay.ca_o = LinearLayer<T>::create(ps, p + "cross.out", d, d);
            lay.ln2 = LayerNormLayer<T>::create(ps, p + "ln2", d);
            lay.ffn1 = LinearLayer<T>::create(ps, p + "ffn1", d, cfg.ffn_hidden);
            lay.ffn2 = LinearLayer<T>::create(ps, p + "ffn2", cfg.ffn_hidden, d);
            lay.ln3 = LayerNormLayer<T>::create(ps, p + "ln3", d);
            lay.refine1 = LinearLayer<T>::create(ps, p + "refine1", d, d);
            lay.refine2 = LinearLayer<T>::create(ps, p + "refine2", d, 7);
            lay.cls = LinearLayer<T>::create(ps, p + "class", d, cfg.num_classes + 1);
            std::string rp = "decoder.rpe" + std::to_string(l) + ".";
            lay.rpe1 = LinearLayer<T>::create(ps, rp + "mlp1", 24, cfg.rpe_hidden);
            lay.rpe2 = LinearLayer<T>::create(ps, rp + "mlp2", cfg.rpe_hidden, cfg.heads);
            layers_.push_back(std::move(lay));
        }
    }

    const DecoderConfig& config() const { return cfg_; }

    // Seeds M queries by farthest-point sampling (start index 0); content
    // and initial boxes come from the seed points' fused features.
    QuerySetT<T> init_queries(const FusedPointFeatures<T>& fused, int m) const {
        int n = fused.features.rows();
        if (n < m) throw ContractError("init_queries: need at least M points");
        std::vector<int> seeds = farthest_point_sample(fused.positions, m);
        std::vector<T> seed_pos(static_cast<std::size_t>(m) * 3);
        for (int i = 0; i < m; ++i)
            for (int a = 0; a < 3; ++a)
                seed_pos[static_cast<std::size_t>(i) * 3 + a] = static_cast<T>(
                    fused.positions[static_cast<std::size_t>(seeds[static_cast<std::size_t>(i)])][static_cast<std::size_t>(a)]);
        auto seed_feat = gather_rows(fused.features, seeds);
        QuerySetT<T> qs;
        qs.content = content_proj_(seed_feat);
        auto raw = init_ffn2_(gelu(init_ffn1_(seed_feat)));  // M x 8
        auto seed_t = TensorT<T>::from_data({m, 3}, std::move(seed_pos));
        qs.center = add(seed_t, slice_cols(raw, 0, 3));
        qs.size = mul_scalar(exp_el(slice_cols(raw, 3, 6)), static_cast<T>(cfg_.default_size));
        qs.yaw = atan2_el(slice_cols(raw, 6, 7), slice_cols(raw, 7, 8));
        qs.logits = TensorT<T>::zeros({m, cfg_.num_classes + 1});
        return qs;
    }

    QuerySetT<T> run_layer(const QuerySetT<T>& qs, const FusedPointFeatures<T>& fused,
                           int layer) const {
        const Layer& L = layers_[static_cast<std::size_t>(layer)];
        int d = cfg_.content_dim, heads = cfg_.heads, ch = d / heads;
        T scale = T(1) / std::sqrt(static_cast<T>(ch));

        // (a) self-attention among query contents
        auto x = qs.content;
        {
            auto q = L.sa_q(x), k = L.sa_k(x), v = L.sa_v(x);
            TensorT<T> cat;
            for (int hd = 0; hd < heads; ++hd) {
                auto qh = slice_cols(q, hd * ch, (hd + 1) * ch);
                auto kh = slice_cols(k, hd * ch, (hd + 1) * ch);
                auto vh = slice_cols(v, hd * ch, (hd + 1) * ch);
                auto attn = softmax_rows(mul_scalar(matmul(qh, transpose(kh)), scale));
                auto out = matmul(attn, vh);
                cat = hd == 0 ? out : concat_cols(cat, out);
            }
            x = L.ln1(add(x, L.sa_o(cat)));
        }

        // (b) cross-attention to the fused point features, biased by the
        // 3DV-RPE of the current boxes
        {
            int n = fused.features.rows(), m = x.rows();
            auto offsets = canonical_offsets_batch(fused.positions, qs.center, qs.size, qs.yaw);
            auto bias_all = L.rpe2(gelu(L.rpe1(offsets)));  // (M*N) x heads
            auto q = L.ca_q(x), k = L.ca_k(fused.features), v = L.ca_v(fused.features);
            TensorT<T> cat;
            for (int hd = 0; hd < heads; ++hd) {
                auto qh = slice_cols(q, hd * ch, (hd + 1) * ch);
                auto kh = slice_cols(k, hd * ch, (hd + 1) * ch);
                auto vh = slice_cols(v, hd * ch, (hd + 1) * ch);
                auto bias = reshape(slice_cols(bias_all, hd, hd + 1), {m, n});
                auto scores = add(mul_scalar(matmul(qh, transpose(kh)), scale), bias);
                auto attn = softmax_rows(scores);
                auto out = matmul(attn, vh);
                cat = hd == 0 ? out : concat_cols(cat, out);
            }
            x = L.ln2(add(x, L.ca_o(cat)));
        }

        // (c) feed-forward block
        x = L.ln3(add(x, L.ffn2(gelu(L.ffn1(x)))));

        // (d) box refinement and classification from the updated content
        auto delta = L.refine2(gelu(L.refine1(x)));  // M x 7
        QuerySetT<T> out;
        out.content = x;
        out.center = add(qs.center, slice_cols(delta, 0, 3));
        out.size = mul(qs.size, exp_el(slice_cols(delta, 3, 6)));
        out.yaw = add(qs.yaw, slice_cols(delta, 6, 7));
        out.logits = L.cls(x);
        return out;
    }

    // Per-layer query sets for deep supervision; back() is the final set.
    std::vector<QuerySetT<T>> forward(const FusedPointFeatures<T>& fused) const {
        auto qs = init_queries(fused, cfg_.num_queries);
        std::vector<QuerySetT<T>> outs;
        outs.reserve(static_cast<std::size_t>(cfg_.layers));
        for (int l = 0; l < cfg_.layers; ++l) {
            qs = run_layer(qs, fused, l);
            outs.push_back(qs);
        }
        return outs;
    }

private:
    struct Layer {
        LinearLayer<T> sa_q, sa_k, sa_v, sa_o;
        LayerNormLayer<T> ln1;
        LinearLayer<T> ca_q, ca_k, ca_v, ca_o;
        LayerNormLayer<T> ln2;
        LinearLayer<T> ffn1, ffn2;
        LayerNormLayer<T> ln3;
        LinearLayer<T> refine1, refine2;
        LinearLayer<T> cls;
        LinearLayer<T> rpe1, rpe2;
    };

    DecoderConfig cfg_;
    LinearLayer<T> content_proj_, init_ffn1_, init_ffn2_;
    std::vector<Layer> layers_;
};

// Decodes one query set into scored detections: class = argmax over the C
// real classes, score = p_class * (1 - p_no_object); no NMS.
template <class T>
std::vector<Box3D> predict(const QuerySetT<T>& qs, double score_thresh) {
    auto probs = softmax_rows(qs.logits.detach());
    int m = probs.rows(), c1 = probs.cols();
    std::vector<Box3D> out;
    for (int i = 0; i < m; ++i) {
        int best = 0;
        for (int j = 1; j < c1 - 1; ++j)
            if (probs.at(i, j) > probs.at(i, best)) best = j;
        double score = static_cast<double>(probs.at(i, best)) *
                       (1.0 - static_cast<double>(probs.at(i, c1 - 1)));
        if (score < score_thresh) continue;
        Box3D box;
        box.center = {static_cast<double>(qs.center.at(i, 0)), static_cast<double>(qs.center.at(i, 1)),
                      static_cast<double>(qs.center.at(i, 2))};
        box.size = {static_cast<double>(qs.size.at(i, 0)), static_cast<double>(qs.size.at(i, 1)),
                    static_cast<double>(qs.size.at(i, 2))};
        box.yaw = wrap_angle(static_cast<double>(qs.yaw.at(i, 0)));
        box.class_id = best;
        box.score = score;
        out.push_back(box);
    }
    return out;
}

}  // namespace mvdetr
