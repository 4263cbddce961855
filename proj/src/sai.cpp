#include "sadet/sai.hpp"

#include "text_io.hpp"

#include <cmath>
#include <fstream>
#include <istream>
#include <ostream>
#include <random>

namespace sadet {

namespace {

constexpr std::pair<int, int> kCocoBones[] = {
    {0, 1},  {0, 2},  {1, 3},   {2, 4},   {0, 5},   {0, 6},   {5, 7},   {7, 9},   {6, 8},
    {8, 10}, {5, 6},  {5, 11},  {6, 12},  {11, 12}, {11, 13}, {13, 15}, {12, 14}, {14, 16},
};

Eigen::ArrayXd sigmoid(const Eigen::ArrayXd& x) { return 1.0 / (1.0 + (-x).exp()); }

double sigmoid(double x) { return 1.0 / (1.0 + std::exp(-x)); }

Mat relu(const Mat& x) { return x.cwiseMax(0.0); }

Mat relu_mask(const Mat& pre) { return (pre.array() > 0.0).cast<double>().matrix(); }

// Applies the J x J adjacency to every (frame, channel) column of a T*J x C
// frame-major matrix.
Mat graph_apply(const Mat& adj, const Mat& x, Index joints)
{
    const Index cols = x.size() / joints;
    Mat out(x.rows(), x.cols());
    Eigen::Map<Mat>(out.data(), joints, cols).noalias() = adj * Eigen::Map<const Mat>(x.data(), joints, cols);
    return out;
}

void check_clip(const SaiParams& p, const Clip& clip)
{
    const auto& d = p.dims;
    if (clip.scene.vector.size() != d.scene_dim) {
        throw ModelError("clip " + clip.clip_id + ": scene dim " + std::to_string(clip.scene.vector.size()) +
                         " != model scene_dim " + std::to_string(d.scene_dim));
    }
    if (clip.skeleton.coords.cols() != 2 * d.joints) {
        throw ModelError("clip " + clip.clip_id + ": joint count does not match the model");
    }
    if (clip.skeleton.coords.rows() < 1 || clip.skeleton.pos.rows() != clip.skeleton.coords.rows() ||
        clip.skeleton.pos.cols() != 4) {
        throw ModelError("clip " + clip.clip_id + ": malformed skeleton");
    }
}

void backward_encoder(const SaiParams& p, const SaiForward& f, const Vec& dfused, SaiParams& g)
{
    const auto& d = p.dims;
    const Index h = d.scene_hidden, ht = d.lstm_hidden, hg = d.gcn_hidden, J = d.joints;
    const Index T = f.frames;

    if (!d.skeleton_only) {
        const Vec da2 = dfused.head(h).cwiseProduct(relu_mask(f.scene_a2));
        g.scene_w2.noalias() += da2 * f.scene_h1.transpose();
        g.scene_b2 += da2;
        const Vec da1 = (p.scene_w2.transpose() * da2).cwiseProduct(relu_mask(f.scene_a1));
        g.scene_w1.noalias() += da1 * f.scene_in.transpose();
        g.scene_b1 += da1;
    }

    const Vec dpos = dfused.tail(d.pos_hidden);
    g.pos_w.noalias() += dpos * f.box.transpose();
    g.pos_b += dpos;

    // Backpropagation through time.
    Mat dgates(4 * ht, T);
    Vec dh = dfused.segment(h, ht);
    Vec dc = Vec::Zero(ht);
    for (Index t = T - 1; t >= 0; --t) {
        const auto i = f.gate_i.col(t).array();
        const auto fg = f.gate_f.col(t).array();
        const auto gg = f.gate_g.col(t).array();
        const auto o = f.gate_o.col(t).array();
        const auto tc = f.cell_tanh.col(t).array();
        const Eigen::ArrayXd c_prev = t > 0 ? Eigen::ArrayXd(f.cell.col(t - 1).array()) : Eigen::ArrayXd::Zero(ht);

        const Eigen::ArrayXd dha = dh.array();
        const Eigen::ArrayXd dcell = dc.array() + dha * o * (1.0 - tc * tc);
        dgates.col(t).segment(0, ht) = (dcell * gg * i * (1.0 - i)).matrix();
        dgates.col(t).segment(ht, ht) = (dcell * c_prev * fg * (1.0 - fg)).matrix();
        dgates.col(t).segment(2 * ht, ht) = (dcell * i * (1.0 - gg * gg)).matrix();
        dgates.col(t).segment(3 * ht, ht) = (dha * tc * o * (1.0 - o)).matrix();
        dc = (dcell * fg).matrix();
        dh.noalias() = p.lstm_wh.transpose() * dgates.col(t);
    }
    Mat hidden_prev = Mat::Zero(ht, T);
    if (T > 1) hidden_prev.rightCols(T - 1) = f.hidden.leftCols(T - 1);
    g.lstm_wh.noalias() += dgates * hidden_prev.transpose();
    g.lstm_b += dgates.rowwise().sum();
    g.lstm_wx.noalias() += dgates * f.pooled;
    const Mat dpooled = dgates.transpose() * p.lstm_wx;   // T x hg

    // Mean pooling over joints.
    Mat dh2(T * J, hg);
    {
        Eigen::Map<Mat> view(dh2.data(), J, T * hg);
        Eigen::Map<const Eigen::RowVectorXd> flat(dpooled.data(), T * hg);
        view = (flat / static_cast<double>(J)).replicate(J, 1);
    }
    const Mat adj = SkeletonAdjacency::for_joints(d.joints).normalized;

    const Mat dz2 = dh2.cwiseProduct(relu_mask(f.gcn_z2));
    g.gcn_b2 += dz2.colwise().sum().transpose();
    const Mat dp2 = graph_apply(adj, dz2, J);
    g.gcn_w2.noalias() += f.gcn_h1.transpose() * dp2;
    const Mat dz1 = (dp2 * p.gcn_w2.transpose()).cwiseProduct(relu_mask(f.gcn_z1));
    g.gcn_b1 += dz1.colwise().sum().transpose();
    const Mat dp1 = graph_apply(adj, dz1, J);
    g.gcn_w1.noalias() += f.joints_in.transpose() * dp1;
}

} // namespace

void SaiDims::validate() const
{
    if (joints < 1 || scene_dim < 1 || scene_hidden < 1 || gcn_hidden < 1 || lstm_hidden < 1 || pos_hidden < 1) {
        throw ModelError("model dims must be positive");
    }
    if (head_hidden < 0 || decoder_hidden < 0 || decoder_code < 0) throw ModelError("model dims must be >= 0");
    if ((decoder_hidden > 0) != (decoder_code > 0)) {
        throw ModelError("decoder_hidden and decoder_code must both be zero or both positive");
    }
}

SkeletonAdjacency SkeletonAdjacency::from_edges(int joints, const std::vector<std::pair<int, int>>& edges)
{
    SkeletonAdjacency a;
    a.binary = Mat::Identity(joints, joints);
    for (auto [u, v] : edges) {
        if (u < 0 || v < 0 || u >= joints || v >= joints) throw ModelError("adjacency edge out of range");
        a.binary(u, v) = 1.0;
        a.binary(v, u) = 1.0;
    }
    const Vec inv_sqrt = a.binary.rowwise().sum().cwiseSqrt().cwiseInverse();
    a.normalized = inv_sqrt.asDiagonal() * a.binary * inv_sqrt.asDiagonal();
    return a;
}

SkeletonAdjacency SkeletonAdjacency::for_joints(int joints)
{
    std::vector<std::pair<int, int>> edges;
    if (joints == 17) {
        edges.assign(std::begin(kCocoBones), std::end(kCocoBones));
    } else {
        for (int j = 0; j + 1 < joints; ++j) edges.emplace_back(j, j + 1);
    }
    return from_edges(joints, edges);
}

std::vector<int> coco_mirror_permutation()
{
    return {0, 2, 1, 4, 3, 6, 5, 8, 7, 10, 9, 12, 11, 14, 13, 16, 15};
}

SaiParams SaiParams::zeros(const SaiDims& d)
{
    d.validate();
    SaiParams p;
    p.dims = d;
    const Index F = d.concat_dim();
    p.scene_w1 = Mat::Zero(d.scene_hidden, d.scene_dim);
    p.scene_b1 = Mat::Zero(d.scene_hidden, 1);
    p.scene_w2 = Mat::Zero(d.scene_hidden, d.scene_hidden);
    p.scene_b2 = Mat::Zero(d.scene_hidden, 1);
    p.gcn_w1 = Mat::Zero(2, d.gcn_hidden);
    p.gcn_b1 = Mat::Zero(d.gcn_hidden, 1);
    p.gcn_w2 = Mat::Zero(d.gcn_hidden, d.gcn_hidden);
    p.gcn_b2 = Mat::Zero(d.gcn_hidden, 1);
    p.lstm_wx = Mat::Zero(4 * d.lstm_hidden, d.gcn_hidden);
    p.lstm_wh = Mat::Zero(4 * d.lstm_hidden, d.lstm_hidden);
    p.lstm_b = Mat::Zero(4 * d.lstm_hidden, 1);
    p.pos_w = Mat::Zero(d.pos_hidden, 4);
    p.pos_b = Mat::Zero(d.pos_hidden, 1);
    p.head_w1 = Mat::Zero(d.head_hidden, d.head_hidden > 0 ? F : 0);
    p.head_b1 = Mat::Zero(d.head_hidden, 1);
    p.head_w2 = Mat::Zero(1, d.head_hidden > 0 ? d.head_hidden : F);
    p.head_b2 = Mat::Zero(1, 1);
    const Index dh = d.has_decoder() ? d.decoder_hidden : 0;
    const Index dc = d.has_decoder() ? d.decoder_code : 0;
    const Index df = d.has_decoder() ? F : 0;
    p.dec_w1 = Mat::Zero(dh, df);
    p.dec_b1 = Mat::Zero(dh, 1);
    p.dec_w2 = Mat::Zero(dc, dh);
    p.dec_b2 = Mat::Zero(dc, 1);
    p.dec_w3 = Mat::Zero(dh, dc);
    p.dec_b3 = Mat::Zero(dh, 1);
    p.dec_w4 = Mat::Zero(df, dh);
    p.dec_b4 = Mat::Zero(df, 1);
    p.dec_shift = Mat::Zero(df, 1);
    p.dec_scale = Mat::Zero(df, 1);
    return p;
}

SaiParams SaiParams::random(const SaiDims& d, std::uint64_t seed)
{
    SaiParams p = zeros(d);
    std::mt19937_64 rng(seed);
    p.for_each([&](const char* name, Mat& m) {
        if (m.size() == 0 || m.cols() == 1) return;   // biases stay zero
        const double limit = std::sqrt(6.0 / static_cast<double>(m.rows() + m.cols()));
        std::uniform_real_distribution<double> u(-limit, limit);
        for (Index i = 0; i < m.size(); ++i) m.data()[i] = u(rng);
        (void)name;
    });
    p.lstm_b.middleRows(d.lstm_hidden, d.lstm_hidden).setOnes();
    p.dec_scale.setOnes();
    return p;
}

Index SaiParams::size() const
{
    Index n = 0;
    for_each([&](const char*, const Mat& m) { n += m.size(); });
    return n;
}

Vec SaiParams::flatten() const
{
    Vec out(size());
    Index offset = 0;
    for_each([&](const char*, const Mat& m) {
        out.segment(offset, m.size()) = m.reshaped();
        offset += m.size();
    });
    return out;
}

void SaiParams::assign(const Vec& flat)
{
    if (flat.size() != size()) throw ModelError("SaiParams::assign: size mismatch");
    Index offset = 0;
    for_each([&](const char*, Mat& m) {
        m.reshaped() = flat.segment(offset, m.size());
        offset += m.size();
    });
}

bool SaiParams::all_finite() const
{
    bool ok = true;
    for_each([&](const char*, const Mat& m) { ok = ok && m.allFinite(); });
    return ok;
}

double SaiParams::squared_norm() const
{
    double s = 0.0;
    for_each([&](const char*, const Mat& m) { s += m.squaredNorm(); });
    return s;
}

Mat normalized_joints(const SkeletonSequence& sk)
{
    const Index T = sk.frames();
    const Index J = sk.joints();
    Mat x(T * J, 2);
    for (Index t = 0; t < T; ++t) {
        const double cx = sk.pos(t, 0), cy = sk.pos(t, 1);
        const double w = std::max(sk.pos(t, 2), 1e-3), hh = std::max(sk.pos(t, 3), 1e-3);
        for (Index j = 0; j < J; ++j) {
            x(t * J + j, 0) = 2.0 * (sk.x(t, j) - cx) / w;
            x(t * J + j, 1) = 2.0 * (sk.y(t, j) - cy) / hh;
        }
    }
    return x;
}

Vec mean_box(const SkeletonSequence& sk) { return sk.pos.colwise().mean().transpose(); }

SaiForward forward(const SaiParams& p, const Clip& clip)
{
    check_clip(p, clip);
    const auto& d = p.dims;
    const Index h = d.scene_hidden, ht = d.lstm_hidden, hg = d.gcn_hidden, J = d.joints;
    SaiForward f;
    const Index T = clip.skeleton.frames();
    f.frames = static_cast<int>(T);

    f.scene_in = clip.scene.vector;
    f.scene_a1 = p.scene_w1 * f.scene_in + p.scene_b1;
    f.scene_h1 = relu(f.scene_a1);
    f.scene_a2 = p.scene_w2 * f.scene_h1 + p.scene_b2;
    f.scene_h2 = d.skeleton_only ? Vec(Vec::Zero(h)) : Vec(relu(f.scene_a2));

    const Mat adj = SkeletonAdjacency::for_joints(d.joints).normalized;
    f.joints_in = normalized_joints(clip.skeleton);
    f.gcn_z1 = graph_apply(adj, f.joints_in * p.gcn_w1, J);
    f.gcn_z1.rowwise() += p.gcn_b1.transpose().row(0);
    f.gcn_h1 = relu(f.gcn_z1);
    f.gcn_z2 = graph_apply(adj, f.gcn_h1 * p.gcn_w2, J);
    f.gcn_z2.rowwise() += p.gcn_b2.transpose().row(0);
    f.gcn_h2 = relu(f.gcn_z2);
    f.pooled.resize(T, hg);
    Eigen::Map<Eigen::RowVectorXd>(f.pooled.data(), T * hg) =
        Eigen::Map<const Mat>(f.gcn_h2.data(), J, T * hg).colwise().mean();

    const Mat xg = p.lstm_wx * f.pooled.transpose();   // 4ht x T
    f.gate_i.resize(ht, T);
    f.gate_f.resize(ht, T);
    f.gate_g.resize(ht, T);
    f.gate_o.resize(ht, T);
    f.cell.resize(ht, T);
    f.cell_tanh.resize(ht, T);
    f.hidden.resize(ht, T);
    Vec hprev = Vec::Zero(ht), cprev = Vec::Zero(ht);
    for (Index t = 0; t < T; ++t) {
        Vec a = xg.col(t) + p.lstm_b;
        a.noalias() += p.lstm_wh * hprev;
        f.gate_i.col(t) = sigmoid(a.segment(0, ht).array()).matrix();
        f.gate_f.col(t) = sigmoid(a.segment(ht, ht).array()).matrix();
        f.gate_g.col(t) = a.segment(2 * ht, ht).array().tanh().matrix();
        f.gate_o.col(t) = sigmoid(a.segment(3 * ht, ht).array()).matrix();
        cprev = f.gate_f.col(t).cwiseProduct(cprev) + f.gate_i.col(t).cwiseProduct(f.gate_g.col(t));
        f.cell.col(t) = cprev;
        f.cell_tanh.col(t) = cprev.array().tanh().matrix();
        hprev = f.gate_o.col(t).cwiseProduct(f.cell_tanh.col(t));
        f.hidden.col(t) = hprev;
    }

    f.box = mean_box(clip.skeleton);
    f.pos_out = p.pos_w * f.box + p.pos_b;

    f.fused.resize(d.concat_dim());
    f.fused << f.scene_h2, f.hidden.col(T - 1), f.pos_out;

    if (d.head_hidden > 0) {
        f.head_a1 = p.head_w1 * f.fused + p.head_b1;
        f.head_h1 = relu(f.head_a1);
        f.logit = (p.head_w2 * f.head_h1)(0, 0) + p.head_b2(0, 0);
    } else {
        f.logit = (p.head_w2 * f.fused)(0, 0) + p.head_b2(0, 0);
    }
    f.score = sigmoid(f.logit);
    return f;
}

double score_clip(const SaiParams& params, const Clip& clip) { return forward(params, clip).score; }

Vec encode(const SaiParams& params, const Clip& clip) { return forward(params, clip).fused; }

void backward(const SaiParams& p, const SaiForward& f, double upstream, SaiParams& g)
{
    if (upstream == 0.0) return;
    const double dlogit = upstream * f.score * (1.0 - f.score);
    Vec dfused;
    if (p.dims.head_hidden > 0) {
        g.head_w2.noalias() += dlogit * f.head_h1.transpose();
        g.head_b2(0, 0) += dlogit;
        const Vec da = (p.head_w2.transpose() * dlogit).cwiseProduct(relu_mask(f.head_a1));
        g.head_w1.noalias() += da * f.fused.transpose();
        g.head_b1 += da;
        dfused = p.head_w1.transpose() * da;
    } else {
        g.head_w2.noalias() += dlogit * f.fused.transpose();
        g.head_b2(0, 0) += dlogit;
        dfused = p.head_w2.transpose() * dlogit;
    }
    backward_encoder(p, f, dfused, g);
}

SaiParams backward(const SaiParams& params, const Clip& clip, double upstream)
{
    SaiParams grads = SaiParams::zeros(params.dims);
    backward(params, forward(params, clip), upstream, grads);
    return grads;
}

DecoderForward decode(const SaiParams& p, const Vec& fused)
{
    if (!p.dims.has_decoder()) throw ModelError("model has no decoder");
    if (fused.size() != p.dec_shift.rows()) throw ModelError("decode: feature size mismatch");
    DecoderForward d;
    d.z = (fused - p.dec_shift).cwiseProduct(p.dec_scale);
    d.a1 = p.dec_w1 * d.z + p.dec_b1;
    d.h1 = relu(d.a1);
    d.a2 = p.dec_w2 * d.h1 + p.dec_b2;
    d.h2 = relu(d.a2);
    d.a3 = p.dec_w3 * d.h2 + p.dec_b3;
    d.h3 = relu(d.a3);
    d.out = p.dec_w4 * d.h3 + p.dec_b4;
    return d;
}

double reconstruction_error(const DecoderForward& dec)
{
    return (dec.out - dec.z).squaredNorm() / static_cast<double>(dec.z.size());
}

Vec decoder_backward(const SaiParams& p, const Vec& fused, const DecoderForward& d, double upstream, SaiParams& g)
{
    const Vec dout = upstream * 2.0 * (d.out - d.z) / static_cast<double>(d.z.size());
    g.dec_w4.noalias() += dout * d.h3.transpose();
    g.dec_b4 += dout;
    const Vec da3 = (p.dec_w4.transpose() * dout).cwiseProduct(relu_mask(d.a3));
    g.dec_w3.noalias() += da3 * d.h2.transpose();
    g.dec_b3 += da3;
    const Vec da2 = (p.dec_w3.transpose() * da3).cwiseProduct(relu_mask(d.a2));
    g.dec_w2.noalias() += da2 * d.h1.transpose();
    g.dec_b2 += da2;
    const Vec da1 = (p.dec_w2.transpose() * da2).cwiseProduct(relu_mask(d.a1));
    g.dec_w1.noalias() += da1 * d.z.transpose();
    g.dec_b1 += da1;
    const Vec dz = p.dec_w1.transpose() * da1 - dout;
    g.dec_shift -= p.dec_scale.cwiseProduct(dz);
    g.dec_scale += (fused - p.dec_shift).cwiseProduct(dz);
    return p.dec_scale.cwiseProduct(dz);
}

void fit_decoder_normalization(SaiParams& p, std::span<const Vec> features)
{
    if (!p.dims.has_decoder()) throw ModelError("fit_decoder_normalization: model has no decoder");
    if (features.empty()) throw ModelError("fit_decoder_normalization: no features");
    const Index F = p.dec_shift.rows();
    Vec mean = Vec::Zero(F), var = Vec::Zero(F);
    for (const auto& f : features) mean += f;
    mean /= static_cast<double>(features.size());
    for (const auto& f : features) var += (f - mean).cwiseAbs2();
    var /= static_cast<double>(features.size());

    const auto& d = p.dims;
    p.dec_shift = mean;
    Index offset = 0;
    for (Index len : {Index(d.scene_hidden), Index(d.lstm_hidden), Index(d.pos_hidden)}) {
        const double v = var.segment(offset, len).mean();
        p.dec_scale.middleRows(offset, len).setConstant(v > 1e-12 ? 1.0 / std::sqrt(v) : 1.0);
        offset += len;
    }
}

ReconForward reconstruct_forward(const SaiParams& params, const Clip& clip)
{
    if (!params.dims.has_decoder()) throw ModelError("reconstruct: model has no decoder");
    ReconForward r;
    r.encoder = forward(params, clip);
    r.decoder = decode(params, r.encoder.fused);
    r.error = reconstruction_error(r.decoder);
    return r;
}

double reconstruct(const SaiParams& params, const Clip& clip) { return reconstruct_forward(params, clip).error; }

void reconstruct_backward(const SaiParams& params, const ReconForward& fwd, double upstream, SaiParams& grads)
{
    if (upstream == 0.0) return;
    const Vec dfused = decoder_backward(params, fwd.encoder.fused, fwd.decoder, upstream, grads);
    backward_encoder(params, fwd.encoder, dfused, grads);
}

void write_checkpoint(std::ostream& out, const SaiParams& p)
{
    const auto& d = p.dims;
    out << "sadet-checkpoint 1\n";
    out << "dims " << d.joints << ' ' << d.scene_dim << ' ' << d.scene_hidden << ' ' << d.gcn_hidden << ' '
        << d.lstm_hidden << ' ' << d.pos_hidden << ' ' << d.head_hidden << ' ' << d.decoder_hidden << ' '
        << d.decoder_code << ' ' << (d.skeleton_only ? 1 : 0) << '\n';
    p.for_each([&](const char* name, const Mat& m) {
        out << "tensor " << name << ' ' << m.rows() << ' ' << m.cols() << '\n';
        for (Index i = 0; i < m.size(); ++i) {
            if (i) out << ' ';
            out << detail::format_double(m.data()[i]);
        }
        out << '\n';
    });
}

SaiParams read_checkpoint(std::istream& in)
{
    try {
        detail::expect_token(in, "sadet-checkpoint");
        if (detail::read_token<int>(in, "version") != 1) throw ModelError("unsupported checkpoint version");
        detail::expect_token(in, "dims");
        SaiDims d;
        d.joints = detail::read_token<int>(in, "joints");
        d.scene_dim = detail::read_token<int>(in, "scene_dim");
        d.scene_hidden = detail::read_token<int>(in, "scene_hidden");
        d.gcn_hidden = detail::read_token<int>(in, "gcn_hidden");
        d.lstm_hidden = detail::read_token<int>(in, "lstm_hidden");
        d.pos_hidden = detail::read_token<int>(in, "pos_hidden");
        d.head_hidden = detail::read_token<int>(in, "head_hidden");
        d.decoder_hidden = detail::read_token<int>(in, "decoder_hidden");
        d.decoder_code = detail::read_token<int>(in, "decoder_code");
        d.skeleton_only = detail::read_token<int>(in, "skeleton_only") != 0;
        SaiParams p = SaiParams::zeros(d);
        p.for_each([&](const char* name, Mat& m) {
            detail::expect_token(in, "tensor");
            detail::expect_token(in, name);
            const auto rows = detail::read_token<Index>(in, "rows");
            const auto cols = detail::read_token<Index>(in, "cols");
            if (rows != m.rows() || cols != m.cols()) {
                throw ModelError(std::string("checkpoint tensor ") + name + " has the wrong shape");
            }
            for (Index i = 0; i < m.size(); ++i) m.data()[i] = detail::read_token<double>(in, name);
        });
        return p;
    } catch (const ModelError&) {
        throw;
    } catch (const std::exception& e) {
        throw ModelError(std::string("malformed checkpoint: ") + e.what());
    }
}

void save_checkpoint(const std::string& path, const SaiParams& params)
{
    std::ofstream out(path);
    if (!out) throw ModelError("cannot write checkpoint " + path);
    write_checkpoint(out, params);
}

SaiParams load_checkpoint(const std::string& path)
{
    std::ifstream in(path);
    if (!in) throw ModelError("cannot open checkpoint " + path);
    return read_checkpoint(in);
}

} // namespace sadet
