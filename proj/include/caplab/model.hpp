#pragma once

#include <cstdint>
#include <string>
#include <string_view>
#include <vector>

#include <Eigen/Dense>

namespace caplab {

class ConfigInvalid : public std::invalid_argument {
public:
    using std::invalid_argument::invalid_argument;
};

enum class MlpKind { standard, gated, quarter, none };
enum class Activation { gelu, silu };

std::string_view mlp_kind_name(MlpKind k);
MlpKind parse_mlp_kind(std::string_view s);
std::string_view activation_name(Activation a);
Activation parse_activation(std::string_view s);

struct ModelConfig {
    std::uint64_t layers = 2;
    std::uint64_t heads = 2;
    std::uint64_t head_dim = 64;
    MlpKind mlp = MlpKind::standard;
    Activation activation = Activation::gelu;
    bool tie_weights = true;
    std::uint64_t vocab_size = 0;
    std::uint64_t window_len = 512;

    std::uint64_t d() const { return head_dim * heads; }
    /// Hidden width of the feed-forward block (0 without one).
    std::uint64_t mlp_hidden() const;
    void validate() const;
    bool operator==(const ModelConfig&) const = default;
};

/// One trainable tensor inside the flat parameter vector (row-major).
struct TensorInfo {
    std::string name;
    std::size_t offset = 0;
    std::size_t rows = 0;
    std::size_t cols = 0;
    bool decay = false;  // matrices decay, norm gains and biases do not

    std::size_t size() const { return rows * cols; }
};

/// Tensors in their declared (checkpoint) order.
std::vector<TensorInfo> tensor_layout(const ModelConfig& c);

/// Closed form: V d (twice if untied) + per layer [3d^2 + d^2 attention + MLP +
/// 2d per LayerNorm] + 2d final norm. MLP: standard 8d^2, gated 3 d floor(8d/3),
/// quarter 2d^2, none 0 (and no second norm).
std::uint64_t param_count(const ModelConfig& c);

/// Teacher-forced batch: B windows of T tokens. mask[b*T + t] selects whether
/// the prediction of token t+1 from position t enters the loss.
struct Batch {
    std::size_t B = 0;
    std::size_t T = 0;
    std::vector<std::uint32_t> tokens;
    std::vector<std::uint8_t> mask;
};

/// Decoder-only transformer with pre-LayerNorm blocks, rotary attention and a
/// configurable feed-forward block. All parameters live in one flat vector.
template <class Scalar>
class Transformer {
public:
    using Mat = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
    using Vec = Eigen::Matrix<Scalar, Eigen::Dynamic, 1>;
    using MatMap = Eigen::Map<Mat>;
    using ConstMatMap = Eigen::Map<const Mat>;

    explicit Transformer(const ModelConfig& config);

    const ModelConfig& config() const { return config_; }
    const std::vector<TensorInfo>& layout() const { return layout_; }
    Vec& params() { return params_; }
    const Vec& params() const { return params_; }

    std::size_t tensor_index(std::string_view name) const;
    MatMap tensor(std::size_t i);
    ConstMatMap tensor(std::size_t i) const;
    /// Index of the tensor used as output projection (the embedding when tied).
    std::size_t head_index() const { return head_; }
    std::size_t embedding_index() const { return wte_; }

    /// std 0.02 normal, residual projections scaled by 1/sqrt(2 layers), norm
    /// gains 1 and biases 0.
    void init(std::uint64_t seed);

    /// Summed NLL over masked positions. With `grad` non-null, writes d(sum NLL
    /// * grad_scale)/d(params) into it (overwriting).
    double loss(const Batch& batch, Vec* grad = nullptr, double grad_scale = 1.0);

    /// Per-position NLL of the next token (0 where unmasked), row-major B x T.
    std::vector<double> token_nll(const Batch& batch);

    /// Row t: log-softmax of the prediction made at position t of `tokens`.
    Eigen::MatrixXd log_probs(const std::vector<std::uint32_t>& tokens);

private:
    struct LayerCache {
        Mat x_in, xhat1, h1;
        Vec rstd1;
        Mat qkv;   // after rotary on q and k
        Mat att;   // B*heads blocks of T x T probabilities, stacked
        Mat o;     // attention output before the projection
        Mat x_mid, xhat2, h2;
        Vec rstd2;
        Mat u;     // MLP pre-activation (gated: both branches side by side)
        Mat a;     // MLP hidden after activation (and gating)
    };

    void forward(const Batch& batch);
    void layer_norm(const Mat& x, std::size_t gain, Mat& xhat, Vec& rstd, Mat& out) const;
    void layer_norm_backward(const Mat& dout, const Mat& xhat, const Vec& rstd, std::size_t gain,
                             Vec& grad, Mat& dx) const;
    void rotary(Mat& m, std::size_t T, bool inverse) const;

    ModelConfig config_;
    std::vector<TensorInfo> layout_;
    Vec params_;
    std::size_t wte_ = 0;
    std::size_t head_ = 0;
    std::size_t lnf_ = 0;
    struct LayerIndex {
        std::size_t ln1, wqkv, wo, ln2, w_in, w_out;
    };
    std::vector<LayerIndex> layer_index_;

    // Rotary tables for positions [0, window_len) and rotated dims [0, head_dim/2).
    Mat cos_, sin_;

    // Workspace of the last forward pass.
    std::size_t B_ = 0, T_ = 0;
    std::vector<LayerCache> cache_;
    Mat x_final_, xhat_f_, h_f_;
    Vec rstd_f_;
    Mat logits_;
};

extern template class Transformer<float>;
extern template class Transformer<double>;

/// Largest relative error between analytic and central-difference gradients
/// over `samples` parameters drawn across every tensor; double precision.
struct GradCheckResult {
    double max_rel_error = 0.0;
    std::size_t checked = 0;
    std::string worst_tensor;
};
GradCheckResult grad_check(const ModelConfig& config, std::uint64_t seed, std::size_t samples = 200,
                           double step = 1e-4);

}  // namespace caplab
