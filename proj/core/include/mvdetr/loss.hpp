#pragma once

#include "mvdetr/decoder.hpp"
#include "mvdetr/matching.hpp"

namespace mvdetr {

struct LossWeights {
    double cls = 2.0, center = 1.0, size = 1.0, yaw = 0.5, iou = 2.0;
    double no_object = 0.1;  // classification weight for unmatched queries

    MatchWeights match() const { return {cls, center, size, yaw, iou}; }
};

template <class T>
struct LossBreakdownT {
    TensorT<T> classification, center, size, yaw, iou, total;
};

namespace detail {

// Differentiable axis-aligned-hull IoU of matched predictions against
// constant ground-truth hulls; returns an nm x 1 column of IoU values.
template <class T>
TensorT<T> iou3d_column(const TensorT<T>& center, const TensorT<T>& size, const TensorT<T>& yaw,
                        const std::vector<Box3D>& gts) {
    int nm = center.rows();
    auto cosv = abs_el(cos_el(yaw));
    auto sinv = abs_el(sin_el(yaw));
    auto sx = slice_cols(size, 0, 1), sy = slice_cols(size, 1, 2), sz = slice_cols(size, 2, 3);
    auto hx = mul_scalar(add(mul(cosv, sx), mul(sinv, sz)), T(0.5));
    auto hz = mul_scalar(add(mul(sinv, sx), mul(cosv, sz)), T(0.5));
    auto hy = mul_scalar(sy, T(0.5));
    TensorT<T> h[3] = {hx, hy, hz};

    std::vector<T> glo[3], ghi[3];
    std::vector<T> gvol(static_cast<std::size_t>(nm));
    for (int a = 0; a < 3; ++a) {
        glo[a].resize(static_cast<std::size_t>(nm));
        ghi[a].resize(static_cast<std::size_t>(nm));
    }
    for (int i = 0; i < nm; ++i) {
        Vec3 lo, hi;
        gts[static_cast<std::size_t>(i)].aabb(lo, hi);
        glo[0][static_cast<std::size_t>(i)] = static_cast<T>(lo.x);
        glo[1][static_cast<std::size_t>(i)] = static_cast<T>(lo.y);
        glo[2][static_cast<std::size_t>(i)] = static_cast<T>(lo.z);
        ghi[0][static_cast<std::size_t>(i)] = static_cast<T>(hi.x);
        ghi[1][static_cast<std::size_t>(i)] = static_cast<T>(hi.y);
        ghi[2][static_cast<std::size_t>(i)] = static_cast<T>(hi.z);
        gvol[static_cast<std::size_t>(i)] =
            static_cast<T>((hi.x - lo.x) * (hi.y - lo.y) * (hi.z - lo.z));
    }

    TensorT<T> inter, vol_pred;
    for (int a = 0; a < 3; ++a) {
        auto c = slice_cols(center, a, a + 1);
        auto lo = sub(c, h[a]);
        auto hi = add(c, h[a]);
        auto gl = TensorT<T>::from_data({nm, 1}, glo[a]);
        auto gh = TensorT<T>::from_data({nm, 1}, ghi[a]);
        auto ia = relu(sub(minimum(hi, gh), maximum(lo, gl)));
        auto ext = mul_scalar(h[a], T(2));
        inter = a == 0 ? ia : mul(inter, ia);
        vol_pred = a == 0 ? ext : mul(vol_pred, ext);
    }
    auto gt_vol = TensorT<T>::from_data({nm, 1}, gvol);
    auto uni = sub(add(vol_pred, gt_vol), inter);
    return div(inter, uni);
}

}  // namespace detail

// Set-prediction loss for one decoder layer under a fixed assignment.
// Components are means (over queries for classification, over matched
// pairs otherwise); total applies the configured weights.
template <class T>
LossBreakdownT<T> layer_loss(const QuerySetT<T>& qs, const std::vector<Box3D>& gts,
                             const Assignment& assign, const LossWeights& w) {
    int m = qs.logits.rows();
    int c1 = qs.logits.cols();
    std::vector<int> targets(static_cast<std::size_t>(m), c1 - 1);  // default: no-object
    std::vector<T> weights(static_cast<std::size_t>(m), static_cast<T>(w.no_object));
    std::vector<int> q_idx;
    std::vector<Box3D> matched_gts;
    for (auto [qi, gi] : assign.pairs) {
        targets[static_cast<std::size_t>(qi)] = gts[static_cast<std::size_t>(gi)].class_id;
        weights[static_cast<std::size_t>(qi)] = T(1);
        q_idx.push_back(qi);
        matched_gts.push_back(gts[static_cast<std::size_t>(gi)]);
    }
    LossBreakdownT<T> out;
    out.classification = mul_scalar(cross_entropy(qs.logits, targets, weights), T(1) / static_cast<T>(m));

    int nm = static_cast<int>(q_idx.size());
    if (nm > 0) {
        auto pc = gather_rows(qs.center, q_idx);
        auto psz = gather_rows(qs.size, q_idx);
        auto py = gather_rows(qs.yaw, q_idx);
        std::vector<T> gc(static_cast<std::size_t>(nm) * 3), gs(static_cast<std::size_t>(nm) * 3),
            gy(static_cast<std::size_t>(nm));
        for (int i = 0; i < nm; ++i) {
            const Box3D& b = matched_gts[static_cast<std::size_t>(i)];
            gc[static_cast<std::size_t>(i) * 3 + 0] = static_cast<T>(b.center.x);
            gc[static_cast<std::size_t>(i) * 3 + 1] = static_cast<T>(b.center.y);
            gc[static_cast<std::size_t>(i) * 3 + 2] = static_cast<T>(b.center.z);
            gs[static_cast<std::size_t>(i) * 3 + 0] = static_cast<T>(b.size.x);
            gs[static_cast<std::size_t>(i) * 3 + 1] = static_cast<T>(b.size.y);
            gs[static_cast<std::size_t>(i) * 3 + 2] = static_cast<T>(b.size.z);
            gy[static_cast<std::size_t>(i)] = static_cast<T>(b.yaw);
        }
        T inv = T(1) / static_cast<T>(nm);
        out.center = mul_scalar(sum_all(abs_el(sub(pc, TensorT<T>::from_data({nm, 3}, gc)))), inv);
        out.size = mul_scalar(sum_all(abs_el(sub(psz, TensorT<T>::from_data({nm, 3}, gs)))), inv);
        out.yaw = mul_scalar(
            sum_all(abs_el(wrap_angle(sub(py, TensorT<T>::from_data({nm, 1}, gy))))), inv);
        auto iou = detail::iou3d_column(pc, psz, py, matched_gts);
        out.iou = mean_all(add_scalar(neg(iou), T(1)));
    } else {
        out.center = TensorT<T>::scalar(T(0));
        out.size = TensorT<T>::scalar(T(0));
        out.yaw = TensorT<T>::scalar(T(0));
        out.iou = TensorT<T>::scalar(T(0));
    }
    out.total = add(add(add(mul_scalar(out.classification, static_cast<T>(w.cls)),
                            mul_scalar(out.center, static_cast<T>(w.center))),
                        add(mul_scalar(out.size, static_cast<T>(w.size)),
                            mul_scalar(out.yaw, static_cast<T>(w.yaw)))),
                    mul_scalar(out.iou, static_cast<T>(w.iou)));
    return out;
}

template <class T>
struct LossResultT {
    std::vector<LossBreakdownT<T>> layers;
    TensorT<T> total;  // mean of the layer totals
};

template <class T>
std::vector<PredBox> to_pred_boxes(const QuerySetT<T>& qs) {
    auto probs = softmax_rows(qs.logits.detach());
    int m = probs.rows(), c1 = probs.cols();
    std::vector<PredBox> out(static_cast<std::size_t>(m));
    for (int i = 0; i < m; ++i) {
        PredBox& p = out[static_cast<std::size_t>(i)];
        p.box.center = {static_cast<double>(qs.center.at(i, 0)), static_cast<double>(qs.center.at(i, 1)),
                        static_cast<double>(qs.center.at(i, 2))};
        p.box.size = {static_cast<double>(qs.size.at(i, 0)), static_cast<double>(qs.size.at(i, 1)),
                      static_cast<double>(qs.size.at(i, 2))};
        p.box.yaw = wrap_angle(static_cast<double>(qs.yaw.at(i, 0)));
        p.probs.resize(static_cast<std::size_t>(c1));
        for (int j = 0; j < c1; ++j) p.probs[static_cast<std::size_t>(j)] = static_cast<double>(probs.at(i, j));
    }
    return out;
}

// Deep-supervised set loss: one matching from the final layer, reused by
// every layer's breakdown; the training objective is the layer mean.
// With no ground truth the loss is classification-only.
template <class T>
LossResultT<T> set_prediction_loss(const std::vector<QuerySetT<T>>& layers,
                                   const std::vector<Box3D>& gts, const LossWeights& w) {
    if (layers.empty()) throw ContractError("set_prediction_loss: no layer outputs");
    Assignment assign;
    if (!gts.empty()) {
        auto cost = match_cost(to_pred_boxes(layers.back()), gts, w.match());
        assign = hungarian(cost, layers.back().logits.rows(), static_cast<int>(gts.size()));
    }
    LossResultT<T> out;
    TensorT<T> sum;
    for (const auto& qs : layers) {
        out.layers.push_back(layer_loss(qs, gts, assign, w));
        sum = out.layers.size() == 1 ? out.layers.back().total : add(sum, out.layers.back().total);
    }
    out.total = mul_scalar(sum, T(1) / static_cast<T>(layers.size()));
    return out;
}

}  // namespace mvdetr
