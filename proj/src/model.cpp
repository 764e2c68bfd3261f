#include "caplab/model.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "caplab/rng.hpp"

namespace caplab {

std::string_view mlp_kind_name(MlpKind k) {
    switch (k) {
        case MlpKind::standard: return "standard";
        case MlpKind::gated: return "gated";
        case MlpKind::quarter: return "quarter";
        case MlpKind::none: return "none";
    }
    return "?";
}

MlpKind parse_mlp_kind(std::string_view s) {
    for (auto k : {MlpKind::standard, MlpKind::gated, MlpKind::quarter, MlpKind::none}) {
        if (mlp_kind_name(k) == s) {
            return k;
        }
    }
    throw ConfigInvalid("unknown mlp kind: " + std::string(s));
}

std::string_view activation_name(Activation a) { return a == Activation::gelu ? "gelu" : "silu"; }

Activation parse_activation(std::string_view s) {
    if (s == "gelu") {
        return Activation::gelu;
    }
    if (s == "silu") {
        return Activation::silu;
    }
    throw ConfigInvalid("unknown activation: " + std::string(s));
}

std::uint64_t ModelConfig::mlp_hidden() const {
    switch (mlp) {
        case MlpKind::standard: return 4 * d();
        case MlpKind::gated: return 8 * d() / 3;
        case MlpKind::quarter: return d();
        case MlpKind::none: return 0;
    }
    return 0;
}

void ModelConfig::validate() const {
    if (layers < 1) {
        throw ConfigInvalid("model needs at least one layer");
    }
    if (heads < 1 || head_dim < 2 || head_dim % 2 != 0) {
        throw ConfigInvalid("heads >= 1 and an even head_dim are required");
    }
    if (vocab_size < 1) {
        throw ConfigInvalid("vocab_size must be positive");
    }
    if (window_len < 1) {
        throw ConfigInvalid("window_len must be positive");
    }
}

std::vector<TensorInfo> tensor_layout(const ModelConfig& c) {
    c.validate();
    const std::size_t d = c.d();
    const std::size_t g = c.mlp_hidden();
    std::vector<TensorInfo> out;
    std::size_t offset = 0;
    auto add = [&](std::string name, std::size_t rows, std::size_t cols, bool decay) {
        out.push_back({std::move(name), offset, rows, cols, decay});
        offset += rows * cols;
    };
    add("wte", c.vocab_size, d, true);
    for (std::uint64_t l = 0; l < c.layers; ++l) {
        const std::string p = "h" + std::to_string(l) + ".";
        add(p + "ln1", 2, d, false);
        add(p + "attn.wqkv", d, 3 * d, true);
        add(p + "attn.wo", d, d, true);
        if (c.mlp != MlpKind::none) {
            add(p + "ln2", 2, d, false);
            add(p + "mlp.w_in", d, c.mlp == MlpKind::gated ? 2 * g : g, true);
            add(p + "mlp.w_out", g, d, true);
        }
    }
    add("ln_f", 2, d, false);
    if (!c.tie_weights) {
        add("lm_head", c.vocab_size, d, true);
    }
    return out;
}

std::uint64_t param_count(const ModelConfig& c) {
    c.validate();
    const std::uint64_t d = c.d();
    const std::uint64_t g = c.mlp_hidden();
    std::uint64_t mlp = 0;
    switch (c.mlp) {
        case MlpKind::standard: mlp = 8 * d * d; break;
        case MlpKind::gated: mlp = 3 * d * g; break;
        case MlpKind::quarter: mlp = 2 * d * d; break;
        case MlpKind::none: mlp = 0; break;
    }
    const std::uint64_t norms = c.mlp == MlpKind::none ? 2 * d : 4 * d;
    const std::uint64_t embed = c.vocab_size * d * (c.tie_weights ? 1 : 2);
    return embed + c.layers * (4 * d * d + mlp + norms) + 2 * d;
}

namespace {

constexpr double kLnEps = 1e-5;
constexpr double kRotaryBase = 10000.0;
constexpr Eigen::Index kTile = 128;

template <class Scalar>
void activate(Activation act, const auto& u, auto&& out) {
    if (act == Activation::gelu) {
        const Scalar k = static_cast<Scalar>(0.7978845608028654);  // sqrt(2/pi)
        const Scalar c = static_cast<Scalar>(0.044715);
        out = Scalar(0.5) * u * (Scalar(1) + (k * (u + c * u * u * u)).tanh());
    } else {
        out = u / (Scalar(1) + (-u).exp());
    }
}

// d act(u) / du
template <class Scalar>
void activate_grad(Activation act, const auto& u, auto&& out) {
    if (act == Activation::gelu) {
        const Scalar k = static_cast<Scalar>(0.7978845608028654);
        const Scalar c = static_cast<Scalar>(0.044715);
        const auto t = (k * (u + c * u * u * u)).tanh().eval();
        out = Scalar(0.5) * (Scalar(1) + t) +
              Scalar(0.5) * u * (Scalar(1) - t * t) * k * (Scalar(1) + Scalar(3) * c * u * u);
    } else {
        const auto s = (Scalar(1) / (Scalar(1) + (-u).exp())).eval();
        out = s * (Scalar(1) + u * (Scalar(1) - s));
    }
}

}  // namespace

template <class Scalar>
Transformer<Scalar>::Transformer(const ModelConfig& config) : config_(config), layout_(tensor_layout(config)) {
    params_ = Vec::Zero(static_cast<Eigen::Index>(layout_.back().offset + layout_.back().size()));
    wte_ = tensor_index("wte");
    lnf_ = tensor_index("ln_f");
    head_ = config.tie_weights ? wte_ : tensor_index("lm_head");
    for (std::uint64_t l = 0; l < config.layers; ++l) {
        const std::string p = "h" + std::to_string(l) + ".";
        LayerIndex li{};
        li.ln1 = tensor_index(p + "ln1");
        li.wqkv = tensor_index(p + "attn.wqkv");
        li.wo = tensor_index(p + "attn.wo");
        if (config.mlp != MlpKind::none) {
            li.ln2 = tensor_index(p + "ln2");
            li.w_in = tensor_index(p + "mlp.w_in");
            li.w_out = tensor_index(p + "mlp.w_out");
        }
        layer_index_.push_back(li);
    }
    const std::size_t half = config.head_dim / 2;
    cos_.resize(static_cast<Eigen::Index>(config.window_len), static_cast<Eigen::Index>(half));
    sin_.resize(static_cast<Eigen::Index>(config.window_len), static_cast<Eigen::Index>(half));
    for (std::size_t t = 0; t < config.window_len; ++t) {
        for (std::size_t i = 0; i < half; ++i) {
            const double freq = std::pow(kRotaryBase, -2.0 * static_cast<double>(i) /
                                                          static_cast<double>(config.head_dim));
            const double angle = static_cast<double>(t) * freq;
            cos_(t, i) = static_cast<Scalar>(std::cos(angle));
            sin_(t, i) = static_cast<Scalar>(std::sin(angle));
        }
    }
}

template <class Scalar>
std::size_t Transformer<Scalar>::tensor_index(std::string_view name) const {
    for (std::size_t i = 0; i < layout_.size(); ++i) {
        if (layout_[i].name == name) {
            return i;
        }
    }
    throw std::out_of_range("no tensor named " + std::string(name));
}

template <class Scalar>
typename Transformer<Scalar>::MatMap Transformer<Scalar>::tensor(std::size_t i) {
    const auto& t = layout_.at(i);
    return MatMap(params_.data() + t.offset, static_cast<Eigen::Index>(t.rows), static_cast<Eigen::Index>(t.cols));
}

template <class Scalar>
typename Transformer<Scalar>::ConstMatMap Transformer<Scalar>::tensor(std::size_t i) const {
    const auto& t = layout_.at(i);
    return ConstMatMap(params_.data() + t.offset, static_cast<Eigen::Index>(t.rows),
                       static_cast<Eigen::Index>(t.cols));
}

template <class Scalar>
void Transformer<Scalar>::init(std::uint64_t seed) {
    CounterRng rng(seed, stream::init);
    const double residual = 0.02 / std::sqrt(2.0 * static_cast<double>(config_.layers));
    for (const auto& t : layout_) {
        Scalar* p = params_.data() + t.offset;
        if (!t.decay) {
            // LayerNorm: gain row then bias row.
            std::fill(p, p + t.cols, Scalar(1));
            std::fill(p + t.cols, p + 2 * t.cols, Scalar(0));
            continue;
        }
        const bool is_residual = t.name.ends_with("attn.wo") || t.name.ends_with("mlp.w_out");
        const double std = is_residual ? residual : 0.02;
        for (std::size_t i = 0; i < t.size(); ++i) {
            p[i] = static_cast<Scalar>(std * rng.normal());
        }
    }
}

template <class Scalar>
void Transformer<Scalar>::layer_norm(const Mat& x, std::size_t gain, Mat& xhat, Vec& rstd, Mat& out) const {
    const auto g = tensor(gain);
    const Eigen::Index n = x.rows();
    const Scalar inv_d = Scalar(1) / static_cast<Scalar>(x.cols());
    xhat.resize(n, x.cols());
    out.resize(n, x.cols());
    rstd.resize(n);
    for (Eigen::Index r = 0; r < n; ++r) {
        const Scalar mu = x.row(r).sum() * inv_d;
        xhat.row(r) = x.row(r).array() - mu;
        const Scalar var = xhat.row(r).squaredNorm() * inv_d;
        rstd(r) = Scalar(1) / std::sqrt(var + static_cast<Scalar>(kLnEps));
        xhat.row(r) *= rstd(r);
        out.row(r) = xhat.row(r).array() * g.row(0).array() + g.row(1).array();
    }
}

template <class Scalar>
void Transformer<Scalar>::layer_norm_backward(const Mat& dout, const Mat& xhat, const Vec& rstd,
                                              std::size_t gain, Vec& grad, Mat& dx) const {
    const auto g = tensor(gain);
    const auto& info = layout_[gain];
    MatMap dg(grad.data() + info.offset, 2, static_cast<Eigen::Index>(info.cols));
    dg.row(0) += (dout.array() * xhat.array()).colwise().sum().matrix();
    dg.row(1) += dout.colwise().sum();
    const Eigen::Index n = dout.rows();
    const Scalar inv_d = Scalar(1) / static_cast<Scalar>(dout.cols());
    dx.resize(n, dout.cols());
    for (Eigen::Index r = 0; r < n; ++r) {
        dx.row(r) = dout.row(r).array() * g.row(0).array();
        const Scalar mean_d = dx.row(r).sum() * inv_d;
        const Scalar mean_dx = dx.row(r).dot(xhat.row(r)) * inv_d;
        dx.row(r) = rstd(r) * (dx.row(r).array() - mean_d - xhat.row(r).array() * mean_dx);
    }
}

template <class Scalar>
void Transformer<Scalar>::rotary(Mat& m, std::size_t T, bool inverse) const {
    const std::size_t dh = config_.head_dim;
    const std::size_t half = dh / 2;
    const std::size_t d = config_.d();
    const Eigen::Index n = m.rows();
    for (Eigen::Index r = 0; r < n; ++r) {
        const std::size_t t = static_cast<std::size_t>(r) % T;
        const Scalar* c = cos_.row(static_cast<Eigen::Index>(t)).data();
        const Scalar* s = sin_.row(static_cast<Eigen::Index>(t)).data();
        Scalar* row = m.row(r).data();
        // q heads occupy columns [0, d), k heads [d, 2d).
        for (std::size_t base = 0; base < 2 * d; base += dh) {
            Scalar* x1 = row + base;
            Scalar* x2 = row + base + half;
            if (!inverse) {
                for (std::size_t i = 0; i < half; ++i) {
                    const Scalar a = x1[i], b = x2[i];
                    x1[i] = a * c[i] - b * s[i];
                    x2[i] = b * c[i] + a * s[i];
                }
            } else {
                for (std::size_t i = 0; i < half; ++i) {
                    const Scalar a = x1[i], b = x2[i];
                    x1[i] = a * c[i] + b * s[i];
                    x2[i] = b * c[i] - a * s[i];
                }
            }
        }
    }
}

template <class Scalar>
void Transformer<Scalar>::forward(const Batch& batch) {
    if (batch.T == 0 || batch.T > config_.window_len || batch.tokens.size() != batch.B * batch.T) {
        throw std::invalid_argument("batch shape does not fit the model");
    }
    B_ = batch.B;
    T_ = batch.T;
    const Eigen::Index BT = static_cast<Eigen::Index>(B_ * T_);
    const Eigen::Index T = static_cast<Eigen::Index>(T_);
    const Eigen::Index d = static_cast<Eigen::Index>(config_.d());
    const Eigen::Index dh = static_cast<Eigen::Index>(config_.head_dim);
    const Eigen::Index H = static_cast<Eigen::Index>(config_.heads);
    const Scalar scale = Scalar(1) / std::sqrt(static_cast<Scalar>(dh));

    const auto wte = tensor(wte_);
    Mat x(BT, d);
    for (Eigen::Index r = 0; r < BT; ++r) {
        const auto tok = batch.tokens[static_cast<std::size_t>(r)];
        if (tok >= config_.vocab_size) {
            throw std::out_of_range("token id outside the model vocabulary");
        }
        x.row(r) = wte.row(tok);
    }

    cache_.resize(config_.layers);
    for (std::size_t l = 0; l < config_.layers; ++l) {
        LayerCache& c = cache_[l];
        const LayerIndex& li = layer_index_[l];
        c.x_in = std::move(x);
        layer_norm(c.x_in, li.ln1, c.xhat1, c.rstd1, c.h1);
        c.qkv.resize(BT, 3 * d);
        c.qkv.noalias() = c.h1 * tensor(li.wqkv);
        rotary(c.qkv, T_, false);

        // Fold the 1/sqrt(dh) scale into q so the score products need no extra pass.
        c.qkv.leftCols(d) *= scale;
        c.att.resize(static_cast<Eigen::Index>(B_) * H * T, T);
        c.o.resize(BT, d);
        for (Eigen::Index b = 0; b < static_cast<Eigen::Index>(B_); ++b) {
            for (Eigen::Index h = 0; h < H; ++h) {
                const auto q = c.qkv.block(b * T, h * dh, T, dh);
                const auto k = c.qkv.block(b * T, d + h * dh, T, dh);
                const auto v = c.qkv.block(b * T, 2 * d + h * dh, T, dh);
                auto S = c.att.block((b * H + h) * T, 0, T, T);
                // Causal tiles: rows [r0, r1) only see keys [0, r1).
                for (Eigen::Index r0 = 0; r0 < T; r0 += kTile) {
                    const Eigen::Index rows = std::min(kTile, T - r0);
                    const Eigen::Index keys = r0 + rows;
                    auto St = S.block(r0, 0, rows, keys);
                    St.noalias() = q.middleRows(r0, rows) * k.topRows(keys).transpose();
                    for (Eigen::Index i = 0; i < rows; ++i) {
                        auto row = St.row(i).head(r0 + i + 1);
                        const Scalar mx = row.maxCoeff();
                        row = (row.array() - mx).exp();
                        row /= row.sum();
                        St.row(i).tail(rows - i - 1).setZero();
                    }
                    c.o.block(b * T + r0, h * dh, rows, dh).noalias() = St * v.topRows(keys);
                }
            }
        }
        c.x_mid = c.x_in;
        c.x_mid.noalias() += c.o * tensor(li.wo);

        if (config_.mlp == MlpKind::none) {
            x = c.x_mid;
            continue;
        }
        layer_norm(c.x_mid, li.ln2, c.xhat2, c.rstd2, c.h2);
        c.u.noalias() = c.h2 * tensor(li.w_in);
        const Eigen::Index g = static_cast<Eigen::Index>(config_.mlp_hidden());
        c.a.resize(BT, g);
        if (config_.mlp == MlpKind::gated) {
            activate<Scalar>(config_.activation, c.u.leftCols(g).array(), c.a.array());
            c.a.array() *= c.u.rightCols(g).array();
        } else {
            activate<Scalar>(config_.activation, c.u.array(), c.a.array());
        }
        x = c.x_mid;
        x.noalias() += c.a * tensor(li.w_out);
    }
    x_final_ = std::move(x);
    layer_norm(x_final_, lnf_, xhat_f_, rstd_f_, h_f_);
    logits_.resize(BT, static_cast<Eigen::Index>(config_.vocab_size));
    logits_.noalias() = h_f_ * tensor(head_).transpose();
}

template <class Scalar>
double Transformer<Scalar>::loss(const Batch& batch, Vec* grad, double grad_scale) {
    forward(batch);
    const Eigen::Index BT = static_cast<Eigen::Index>(B_ * T_);
    const Eigen::Index T = static_cast<Eigen::Index>(T_);
    const Eigen::Index d = static_cast<Eigen::Index>(config_.d());
    const Eigen::Index dh = static_cast<Eigen::Index>(config_.head_dim);
    const Eigen::Index H = static_cast<Eigen::Index>(config_.heads);
    const Scalar scale = Scalar(1) / std::sqrt(static_cast<Scalar>(dh));

    // Cross-entropy; logits_ becomes d(loss)/d(logits) in place.
    double total = 0.0;
    for (Eigen::Index r = 0; r < BT; ++r) {
        auto row = logits_.row(r);
        const bool counted = batch.mask[static_cast<std::size_t>(r)] != 0 && (r % T) + 1 < T;
        if (!counted) {
            if (grad != nullptr) {
                row.setZero();
            }
            continue;
        }
        const auto target = static_cast<Eigen::Index>(batch.tokens[static_cast<std::size_t>(r + 1)]);
        const Scalar mx = row.maxCoeff();
        row = (row.array() - mx).exp();
        const Scalar sum = row.sum();
        total += static_cast<double>(std::log(sum)) - static_cast<double>(std::log(row(target)));
        if (grad != nullptr) {
            row *= static_cast<Scalar>(grad_scale) / sum;
            row(target) -= static_cast<Scalar>(grad_scale);
        }
    }
    if (!std::isfinite(total)) {
        return total;
    }
    if (grad == nullptr) {
        return total;
    }

    Vec& gr = *grad;
    gr.setZero(params_.size());
    auto gmap = [&](std::size_t i) {
        const auto& t = layout_[i];
        return MatMap(gr.data() + t.offset, static_cast<Eigen::Index>(t.rows), static_cast<Eigen::Index>(t.cols));
    };

    gmap(head_).noalias() += logits_.transpose() * h_f_;
    Mat dh_f(BT, d);
    dh_f.noalias() = logits_ * tensor(head_);
    Mat dx, tmp;
    layer_norm_backward(dh_f, xhat_f_, rstd_f_, lnf_, gr, dx);

    Mat dA, dU, dO, dqkv, dP;
    for (std::size_t l = config_.layers; l-- > 0;) {
        LayerCache& c = cache_[l];
        const LayerIndex& li = layer_index_[l];
        if (config_.mlp != MlpKind::none) {
            const Eigen::Index g = static_cast<Eigen::Index>(config_.mlp_hidden());
            gmap(li.w_out).noalias() += c.a.transpose() * dx;
            dA.resize(BT, g);
            dA.noalias() = dx * tensor(li.w_out).transpose();
            dU.resize(c.u.rows(), c.u.cols());
            if (config_.mlp == MlpKind::gated) {
                // a = act(u1) * u2
                activate<Scalar>(config_.activation, c.u.leftCols(g).array(), dU.rightCols(g).array());
                activate_grad<Scalar>(config_.activation, c.u.leftCols(g).array(), dU.leftCols(g).array());
                dU.leftCols(g).array() *= dA.array() * c.u.rightCols(g).array();
                dU.rightCols(g).array() *= dA.array();
            } else {
                activate_grad<Scalar>(config_.activation, c.u.array(), dU.array());
                dU.array() *= dA.array();
            }
            gmap(li.w_in).noalias() += c.h2.transpose() * dU;
            Mat dh2(BT, d);
            dh2.noalias() = dU * tensor(li.w_in).transpose();
            layer_norm_backward(dh2, c.xhat2, c.rstd2, li.ln2, gr, tmp);
            dx += tmp;
        }

        gmap(li.wo).noalias() += c.o.transpose() * dx;
        dO.resize(BT, d);
        dO.noalias() = dx * tensor(li.wo).transpose();
        dqkv.setZero(BT, 3 * d);
        dP.resize(kTile, T);
        for (Eigen::Index b = 0; b < static_cast<Eigen::Index>(B_); ++b) {
            for (Eigen::Index h = 0; h < H; ++h) {
                const auto q = c.qkv.block(b * T, h * dh, T, dh);
                const auto k = c.qkv.block(b * T, d + h * dh, T, dh);
                const auto v = c.qkv.block(b * T, 2 * d + h * dh, T, dh);
                const auto P = c.att.block((b * H + h) * T, 0, T, T);
                const auto dOb = dO.block(b * T, h * dh, T, dh);
                auto dq = dqkv.block(b * T, h * dh, T, dh);
                auto dk = dqkv.block(b * T, d + h * dh, T, dh);
                auto dv = dqkv.block(b * T, 2 * d + h * dh, T, dh);
                for (Eigen::Index r0 = 0; r0 < T; r0 += kTile) {
                    const Eigen::Index rows = std::min(kTile, T - r0);
                    const Eigen::Index keys = r0 + rows;
                    const auto Pt = P.block(r0, 0, rows, keys);
                    const auto dOt = dOb.middleRows(r0, rows);
                    dv.topRows(keys).noalias() += Pt.transpose() * dOt;
                    auto dS = dP.block(0, 0, rows, keys);
                    dS.noalias() = dOt * v.topRows(keys).transpose();
                    for (Eigen::Index i = 0; i < rows; ++i) {
                        const Scalar dot = Pt.row(i).dot(dS.row(i));
                        dS.row(i) = (Pt.row(i).array() * (dS.row(i).array() - dot)).matrix();
                    }
                    dq.middleRows(r0, rows).noalias() = dS * k.topRows(keys);
                    dk.topRows(keys).noalias() += dS.transpose() * q.middleRows(r0, rows);
                }
            }
        }
        dqkv.leftCols(d) *= scale;
        rotary(dqkv, T_, true);
        gmap(li.wqkv).noalias() += c.h1.transpose() * dqkv;
        Mat dh1(BT, d);
        dh1.noalias() = dqkv * tensor(li.wqkv).transpose();
        layer_norm_backward(dh1, c.xhat1, c.rstd1, li.ln1, gr, tmp);
        dx += tmp;
    }

    auto gwte = gmap(wte_);
    for (Eigen::Index r = 0; r < BT; ++r) {
        gwte.row(batch.tokens[static_cast<std::size_t>(r)]) += dx.row(r);
    }
    return total;
}

template <class Scalar>
std::vector<double> Transformer<Scalar>::token_nll(const Batch& batch) {
    forward(batch);
    const Eigen::Index BT = static_cast<Eigen::Index>(B_ * T_);
    const Eigen::Index T = static_cast<Eigen::Index>(T_);
    std::vector<double> out(static_cast<std::size_t>(BT), 0.0);
    for (Eigen::Index r = 0; r < BT; ++r) {
        if (batch.mask[static_cast<std::size_t>(r)] == 0 || (r % T) + 1 >= T) {
            continue;
        }
        const auto row = logits_.row(r).template cast<double>();
        const double mx = row.maxCoeff();
        const double lse = mx + std::log((row.array() - mx).exp().sum());
        out[static_cast<std::size_t>(r)] = lse - row(batch.tokens[static_cast<std::size_t>(r + 1)]);
    }
    return out;
}

template <class Scalar>
Eigen::MatrixXd Transformer<Scalar>::log_probs(const std::vector<std::uint32_t>& tokens) {
    Batch b;
    b.B = 1;
    b.T = tokens.size();
    b.tokens = tokens;
    b.mask.assign(tokens.size(), 1);
    forward(b);
    Eigen::MatrixXd out = logits_.template cast<double>();
    for (Eigen::Index r = 0; r < out.rows(); ++r) {
        const double mx = out.row(r).maxCoeff();
        const double lse = mx + std::log((out.row(r).array() - mx).exp().sum());
        out.row(r).array() -= lse;
    }
    return out;
}

template class Transformer<float>;
template class Transformer<double>;

GradCheckResult grad_check(const ModelConfig& config, std::uint64_t seed, std::size_t samples, double step) {
    if (config.d() > 32 || config.layers > 2) {
        throw ConfigInvalid("grad_check expects a tiny config (d <= 32, at most 2 layers)");
    }
    Transformer<double> model(config);
    model.init(seed);
    // Move away from the near-linear init regime so every nonlinearity matters.
    CounterRng rng(seed, stream::sample);
    for (const auto& t : model.layout()) {
        for (std::size_t i = 0; i < t.size(); ++i) {
            model.params()(static_cast<Eigen::Index>(t.offset + i)) += 0.3 * rng.normal();
        }
    }

    Batch batch;
    batch.B = 2;
    batch.T = std::min<std::size_t>(8, config.window_len);
    for (std::size_t i = 0; i < batch.B * batch.T; ++i) {
        batch.tokens.push_back(static_cast<std::uint32_t>(rng.uniform(config.vocab_size)));
        batch.mask.push_back(rng.uniform(5) == 0 ? 0 : 1);
    }

    Eigen::VectorXd grad;
    model.loss(batch, &grad);

    GradCheckResult res;
    const auto& layout = model.layout();
    for (std::size_t s = 0; s < samples; ++s) {
        const auto& t = layout[s % layout.size()];
        const auto idx = static_cast<Eigen::Index>(t.offset + rng.uniform(t.size()));
        const double saved = model.params()(idx);
        model.params()(idx) = saved + step;
        const double up = model.loss(batch);
        model.params()(idx) = saved - step;
        const double down = model.loss(batch);
        model.params()(idx) = saved;
        const double numeric = (up - down) / (2 * step);
        const double analytic = grad(idx);
        // Relative to the gradient scale; the floor keeps round-off in
        // near-zero gradients from dominating.
        const double rel = std::abs(numeric - analytic) / std::max(std::abs(numeric) + std::abs(analytic), 1e-6);
        if (rel > res.max_rel_error) {
            res.max_rel_error = rel;
            res.worst_tensor = t.name;
        }
        ++res.checked;
    }
    return res;
}

}  // namespace caplab
