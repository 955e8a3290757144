#pragma once

#include "handgcn/hand_graph.hpp"
#include "handgcn/numerics.hpp"

#include <array>
#include <cstddef>
#include <optional>
#include <span>
#include <string_view>
#include <vector>

namespace handgcn {

/// Total trainable parameter count quoted for the reference architecture.
inline constexpr std::size_t kReferenceParameterCount = 142447;

struct ModelConfig {
    std::size_t hidden_dim = 128;
    std::size_t num_classes = kNumClasses;
    std::size_t num_nodes = kNumLandmarks;
    std::size_t in_features = kNumNodeFeatures;
    double leaky_alpha = 0.2;
    double dropout_p = 0.4;
    /// Scale target used by preprocessing; carried so inference can preprocess raw poses.
    double desired_distance = 1.0;
    double bn_momentum = 0.1;
    double bn_eps = 1e-5;

    void validate() const;
    friend bool operator==(const ModelConfig&, const ModelConfig&) = default;
};

/// Learnable tensors plus the batch-norm running statistics. Biases and
/// per-channel vectors are stored as 1×n matrices.
struct ModelParams {
    Matrix gcn1_weight;       // in_features × H
    Matrix gcn1_bias;         // 1 × H
    Matrix gcn2_weight;       // H × H
    Matrix gcn2_bias;
    Matrix gcn3_weight;       // H × H
    Matrix gcn3_bias;
    Matrix input_proj_weight; // in_features × H, lifts the input for the residual sums
    Matrix input_proj_bias;
    Matrix bn_gamma;
    Matrix bn_beta;
    Matrix bn_running_mean;   // not trainable
    Matrix bn_running_var;    // not trainable
    Matrix head_weight;       // (num_nodes·H) × num_classes
    Matrix head_bias;         // 1 × num_classes

    /// Correctly shaped tensors, all zero.
    static ModelParams zeros(const ModelConfig& config);

    struct Ref {
        std::string_view name;
        Matrix* tensor;
    };
    struct ConstRef {
        std::string_view name;
        const Matrix* tensor;
    };

    std::vector<Ref> trainables();
    std::vector<ConstRef> trainables() const;
    /// Trainables followed by the running statistics.
    std::vector<Ref> all_tensors();
    std::vector<ConstRef> all_tensors() const;

    friend bool operator==(const ModelParams&, const ModelParams&) = default;
};

/// Xavier-uniform weights, zero biases, gamma = 1, beta = 0, running mean 0, running var 1.
ModelParams init_params(const ModelConfig& config, RngStream& rng);

/// Sum of element counts over trainable tensors (running statistics excluded).
std::size_t parameter_count(const ModelParams& params);

/// D^-1/2 (A + I) D^-1/2 with D the degree matrix of A + I.
Matrix normalized_adjacency(const Matrix& adjacency);

/// Normalized adjacency of the full hand skeleton, computed once.
const Matrix& hand_normalized_adjacency();

/// LeakyReLU(Â·(H_in·W + 1·bᵀ)) + residual for a single graph.
Matrix gcn_layer_forward(const Matrix& a_hat, const Matrix& h_in, const Matrix& weight,
                         const Matrix& bias, const Matrix& residual, double alpha);

/// Dropout state of one graph at one dropout site.
struct GraphDropout {
    /// 0 for a dropped node, 1/(1-p) for a survivor.
    std::vector<double> node_scale;
    /// Adjacency after removing dropped undirected edges.
    Matrix adjacency;
};

struct NodeEdgeDropout {
    Matrix features;
    Matrix adjacency;
    std::vector<double> node_scale;
};

/// Draws a node mask (one uniform per node, in node order) and then an edge mask
/// (one uniform per surviving undirected edge, scanning i < j row-major).
GraphDropout sample_graph_dropout(const Matrix& adjacency, double p, RngStream& rng);

/// Drops whole node rows and whole undirected edges with probability p in
/// training mode, scaling surviving rows by 1/(1-p). Identity when !training.
NodeEdgeDropout node_edge_dropout(const Matrix& features, const Matrix& adjacency, double p,
                                  RngStream& rng, bool training);

/// Node/edge masks for the three dropout sites of a batch. Each site's edge mask
/// is drawn from the adjacency left by the previous site, so GCN layer 2 sees the
/// graph after site 1 and GCN layer 3 the graph after site 2.
struct DropoutMasks {
    std::size_t batch_size = 0;
    std::array<std::vector<GraphDropout>, 3> sites;
};

DropoutMasks sample_dropout_masks(std::size_t batch_size, const ModelConfig& config, RngStream& rng);

enum class Mode { kTraining, kInference };

struct BatchNormCache {
    Matrix x_hat;
    Matrix inv_std; // 1 × channels
};

struct BatchNormOutput {
    Matrix output;
    BatchNormCache cache;
    Matrix running_mean;
    Matrix running_var;
};

/// Per-channel batch norm over the rows of `x` (rows = every node of every sample).
/// Training mode normalizes by the biased batch variance and blends the unbiased
/// variance into the running estimate with `momentum`; inference uses running stats.
/// Throws InsufficientBatch in training mode with fewer than two rows.
BatchNormOutput batch_norm_forward(const Matrix& x, const Matrix& gamma, const Matrix& beta,
                                   const Matrix& running_mean, const Matrix& running_var, Mode mode,
                                   double momentum, double eps);

/// Gradient w.r.t. x of a training-mode batch norm; accumulates dgamma and dbeta.
Matrix batch_norm_backward(const Matrix& grad_out, const BatchNormCache& cache, const Matrix& gamma,
                           Matrix& grad_gamma, Matrix& grad_beta);

/// Everything the backward pass needs from a training-mode forward.
struct ForwardCache {
    std::size_t batch_size = 0;
    ModelConfig config;
    Matrix input; // (B·N) × in_features
    DropoutMasks masks;
    /// Per GCN layer, per sample normalized adjacency.
    std::array<std::vector<Matrix>, 3> a_hat;
    Matrix s0;
    std::array<Matrix, 3> pre_activation; // Â·(H·W + b) of each GCN layer
    Matrix r1, r2, r3;
    BatchNormCache bn;
    Matrix log_probs;
    Matrix running_mean; // updated running statistics to commit after the step
    Matrix running_var;
};

struct ForwardResult {
    Matrix log_probs; // B × num_classes
    std::optional<ForwardCache> cache;
};

/// Stacks the node features of a batch into a (B·N) × F matrix.
Matrix stack_features(std::span<const PoseGraph> batch, const ModelConfig& config);

/// Runs the network. Per sample, with Dropout the node/edge dropout of each site:
///   s0 = X·P + bP
///   d1 = Dropout(GCN1(X; residual s0));              r1 = d1 + s0
///   g2 = GCN2(r1; residual r1); d2 = Dropout(BN(g2)); r2 = d2 + d1 + s0
///   d3 = Dropout(GCN3(r2; residual r2));             r3 = d3 + d2 + d1 + s0
///   log_softmax(flatten(r3)·Wout + bout)
/// GCN1 uses the full skeleton, GCN2 and GCN3 the adjacency left by sites 1 and 2.
/// Training mode draws masks from `rng` and returns a cache; inference mode uses
/// the full skeleton, running batch-norm statistics and never touches `rng`.
ForwardResult model_forward(std::span<const PoseGraph> batch, const ModelParams& params,
                            const ModelConfig& config, Mode mode, RngStream* rng = nullptr);

/// Training-mode forward with caller-supplied dropout masks.
ForwardResult model_forward_with_masks(std::span<const PoseGraph> batch, const ModelParams& params,
                                       const ModelConfig& config, DropoutMasks masks);

/// Mean over rows of -log_probs[i][labels[i]].
double nll_loss(const Matrix& log_probs, std::span<const std::size_t> labels);

/// Gradients of nll_loss w.r.t. every trainable tensor, in ModelParams layout
/// (running-statistic slots are zero). Throws StaleCache if the labels or
/// parameter shapes do not match the cache.
ModelParams model_backward(const ForwardCache& cache, const ModelParams& params,
                           std::span<const std::size_t> labels);

/// Inference-mode log-probabilities for any number of graphs, evaluated in chunks.
Matrix predict_log_probs(std::span<const PoseGraph> graphs, const ModelParams& params,
                         const ModelConfig& config, std::size_t chunk = 256);

} // namespace handgcn
