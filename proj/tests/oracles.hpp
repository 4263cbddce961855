#pragma once

// Independent reference implementations used as test oracles. Nothing here
// calls the library code it checks; loops are written out element by element.

#include "sadet/rkm.hpp"
#include "sadet/sai.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <vector>

namespace oracle {

using sadet::Index;
using sadet::Mat;
using sadet::Vec;

// Mann-Whitney over every (positive, negative) pair; ties count one half.
inline double pairwise_auc(const std::vector<double>& s, const std::vector<int>& l)
{
    double num = 0.0, den = 0.0;
    for (std::size_t i = 0; i < s.size(); ++i) {
        if (l[i] != 1) continue;
        for (std::size_t j = 0; j < s.size(); ++j) {
            if (l[j] != 0) continue;
            den += 1.0;
            num += s[i] > s[j] ? 1.0 : (s[i] == s[j] ? 0.5 : 0.0);
        }
    }
    return num / den;
}

// Precision and recall recomputed from scratch at every distinct threshold.
inline double sweep_ap(const std::vector<double>& s, const std::vector<int>& l)
{
    std::vector<double> thresholds = s;
    std::sort(thresholds.begin(), thresholds.end(), std::greater<>());
    thresholds.erase(std::unique(thresholds.begin(), thresholds.end()), thresholds.end());
    double pos = 0.0;
    for (int x : l) pos += x;
    double ap = 0.0, prev_r = 0.0;
    for (double t : thresholds) {
        double tp = 0.0, flagged = 0.0;
        for (std::size_t i = 0; i < s.size(); ++i) {
            if (s[i] >= t) {
                flagged += 1.0;
                tp += l[i];
            }
        }
        const double r = tp / pos;
        ap += (r - prev_r) * (tp / flagged);
        prev_r = r;
    }
    return ap;
}

inline double topk_mean(std::vector<double> s, int k)
{
    std::sort(s.begin(), s.end(), std::greater<>());
    double sum = 0.0;
    for (int i = 0; i < k; ++i) sum += s[static_cast<std::size_t>(i)];
    return sum / k;
}

inline double cosine(const Vec& a, const Vec& b)
{
    double dot = 0.0, na = 0.0, nb = 0.0;
    for (Index i = 0; i < a.size(); ++i) {
        dot += a[i] * b[i];
        na += a[i] * a[i];
        nb += b[i] * b[i];
    }
    return dot / std::sqrt(na * nb);
}

// Sequential replay of the add-or-combine node update, one side at a time.
struct ReplaySide {
    std::vector<int> ids;
    std::vector<Vec> centers;
    std::vector<long> counts;

    // Returns (added, node id).
    std::pair<bool, int> apply(const Vec& x, double mu)
    {
        int best = -1;
        double best_sim = -2.0;
        for (std::size_t i = 0; i < centers.size(); ++i) {
            const double s = cosine(x, centers[i]);
            if (s > best_sim) best_sim = s, best = static_cast<int>(i);
        }
        if (best >= 0 && best_sim > mu) {
            const double n = static_cast<double>(counts[best]);
            centers[best] = (centers[best] * n + x) / (n + 1.0);
            ++counts[best];
            return {false, ids[best]};
        }
        int id = 0;
        for (int existing : ids) id = std::max(id, existing + 1);
        ids.push_back(id);
        centers.push_back(x);
        counts.push_back(1);
        return {true, id};
    }
};

inline ReplaySide replay_side(const std::vector<sadet::GraphNode>& nodes)
{
    ReplaySide r;
    for (const auto& n : nodes) {
        r.ids.push_back(n.id);
        r.centers.push_back(n.center);
        r.counts.push_back(n.member_count);
    }
    return r;
}

inline std::vector<std::vector<double>> coco_adjacency_normalized()
{
    const int bones[][2] = {{0, 1},  {0, 2},  {1, 3},   {2, 4},   {0, 5},   {0, 6},   {5, 7},   {7, 9},   {6, 8},
                            {8, 10}, {5, 6},  {5, 11},  {6, 12},  {11, 12}, {11, 13}, {13, 15}, {12, 14}, {14, 16}};
    std::vector<std::vector<double>> a(17, std::vector<double>(17, 0.0));
    for (int i = 0; i < 17; ++i) a[i][i] = 1.0;
    for (auto& b : bones) a[b[0]][b[1]] = a[b[1]][b[0]] = 1.0;
    std::vector<double> deg(17, 0.0);
    for (int i = 0; i < 17; ++i)
        for (int j = 0; j < 17; ++j) deg[i] += a[i][j];
    for (int i = 0; i < 17; ++i)
        for (int j = 0; j < 17; ++j) a[i][j] /= std::sqrt(deg[i] * deg[j]);
    return a;
}

inline double relu(double x) { return x > 0.0 ? x : 0.0; }
inline double sigm(double x) { return 1.0 / (1.0 + std::exp(-x)); }

inline std::vector<double> affine(const Mat& w, const Mat& b, const std::vector<double>& x)
{
    std::vector<double> y(static_cast<std::size_t>(w.rows()));
    for (Index r = 0; r < w.rows(); ++r) {
        double acc = b(r, 0);
        for (Index c = 0; c < w.cols(); ++c) acc += w(r, c) * x[static_cast<std::size_t>(c)];
        y[static_cast<std::size_t>(r)] = acc;
    }
    return y;
}

// Fused feature: scene MLP, two GCN layers over the COCO bone graph, joint
// mean, LSTM last hidden state, linear embedding of the mean box.
inline std::vector<double> fused_feature(const sadet::SaiParams& p, const sadet::Clip& clip)
{
    const auto& d = p.dims;
    const int J = d.joints;
    const auto& sk = clip.skeleton;
    const Index T = sk.coords.rows();

    std::vector<double> s(clip.scene.vector.data(), clip.scene.vector.data() + clip.scene.vector.size());
    auto h1 = affine(p.scene_w1, p.scene_b1, s);
    for (auto& v : h1) v = relu(v);
    auto h2 = affine(p.scene_w2, p.scene_b2, h1);
    for (auto& v : h2) v = d.skeleton_only ? 0.0 : relu(v);

    const auto adj = coco_adjacency_normalized();
    const int hg = d.gcn_hidden;
    std::vector<std::vector<double>> seq(static_cast<std::size_t>(T), std::vector<double>(hg, 0.0));
    for (Index t = 0; t < T; ++t) {
        std::vector<std::vector<double>> x(J, std::vector<double>(2));
        for (int j = 0; j < J; ++j) {
            const double w = std::max(sk.pos(t, 2), 1e-3), h = std::max(sk.pos(t, 3), 1e-3);
            x[j][0] = (sk.coords(t, 2 * j) - sk.pos(t, 0)) / (0.5 * w);
            x[j][1] = (sk.coords(t, 2 * j + 1) - sk.pos(t, 1)) / (0.5 * h);
        }
        auto layer = [&](const std::vector<std::vector<double>>& in, const Mat& w, const Mat& b) {
            const int din = static_cast<int>(w.rows()), dout = static_cast<int>(w.cols());
            std::vector<std::vector<double>> xw(J, std::vector<double>(dout, 0.0));
            for (int j = 0; j < J; ++j)
                for (int o = 0; o < dout; ++o)
                    for (int i = 0; i < din; ++i) xw[j][o] += in[j][i] * w(i, o);
            std::vector<std::vector<double>> out(J, std::vector<double>(dout, 0.0));
            for (int j = 0; j < J; ++j)
                for (int o = 0; o < dout; ++o) {
                    double acc = b(o, 0);
                    for (int k = 0; k < J; ++k) acc += adj[j][k] * xw[k][o];
                    out[j][o] = relu(acc);
                }
            return out;
        };
        const auto g2 = layer(layer(x, p.gcn_w1, p.gcn_b1), p.gcn_w2, p.gcn_b2);
        for (int o = 0; o < hg; ++o) {
            for (int j = 0; j < J; ++j) seq[t][o] += g2[j][o];
            seq[t][o] /= J;
        }
    }

    const int ht = d.lstm_hidden;
    std::vector<double> h(ht, 0.0), c(ht, 0.0);
    for (Index t = 0; t < T; ++t) {
        std::vector<double> a(4 * ht);
        for (int r = 0; r < 4 * ht; ++r) {
            double acc = p.lstm_b(r, 0);
            for (int i = 0; i < hg; ++i) acc += p.lstm_wx(r, i) * seq[t][i];
            for (int i = 0; i < ht; ++i) acc += p.lstm_wh(r, i) * h[i];
            a[r] = acc;
        }
        for (int u = 0; u < ht; ++u) {
            const double ig = sigm(a[u]), fg = sigm(a[ht + u]), gg = std::tanh(a[2 * ht + u]),
                         og = sigm(a[3 * ht + u]);
            c[u] = fg * c[u] + ig * gg;
            h[u] = og * std::tanh(c[u]);
        }
    }

    std::vector<double> box(4, 0.0);
    for (Index t = 0; t < T; ++t)
        for (int k = 0; k < 4; ++k) box[k] += sk.pos(t, k) / static_cast<double>(T);
    const auto pe = affine(p.pos_w, p.pos_b, box);

    std::vector<double> fused = h2;
    fused.insert(fused.end(), h.begin(), h.end());
    fused.insert(fused.end(), pe.begin(), pe.end());
    return fused;
}

inline double score(const sadet::SaiParams& p, const sadet::Clip& clip)
{
    auto f = fused_feature(p, clip);
    if (p.dims.head_hidden > 0) {
        f = affine(p.head_w1, p.head_b1, f);
        for (auto& v : f) v = relu(v);
    }
    return sigm(affine(p.head_w2, p.head_b2, f)[0]);
}

inline double reconstruction(const sadet::SaiParams& p, const sadet::Clip& clip)
{
    const auto f = fused_feature(p, clip);
    std::vector<double> z(f.size());
    for (std::size_t i = 0; i < f.size(); ++i) z[i] = (f[i] - p.dec_shift(i, 0)) * p.dec_scale(i, 0);
    auto a = affine(p.dec_w1, p.dec_b1, z);
    for (auto& v : a) v = relu(v);
    a = affine(p.dec_w2, p.dec_b2, a);
    for (auto& v : a) v = relu(v);
    a = affine(p.dec_w3, p.dec_b3, a);
    for (auto& v : a) v = relu(v);
    a = affine(p.dec_w4, p.dec_b4, a);
    double err = 0.0;
    for (std::size_t i = 0; i < z.size(); ++i) err += (a[i] - z[i]) * (a[i] - z[i]);
    return err / static_cast<double>(z.size());
}

} // namespace oracle
