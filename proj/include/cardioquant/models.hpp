#pragma once

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "cardioquant/geometry.hpp"
#include "cardioquant/graph.hpp"
#include "cardioquant/phantom.hpp"
#include "cardioquant/tensor.hpp"

namespace cq {

// Hyperparameters of a single training run.
struct TrainConfig {
  int batch = 32;
  int epochs = 40;
  double lr = 1e-3;
  std::uint64_t seed = 1;
};

TrainConfig direct_train_defaults();
TrainConfig unet_train_defaults();
TrainConfig masknet_train_defaults();

// A trained model: ordered named tensors (parameters first, then batch-norm
// running statistics) plus enough metadata to rebuild the exact graph.
struct ModelWeights {
  std::string architecture;  // "direct", "unet" or "masknet"
  int image_size = 0;
  int base_width = 0;
  std::uint64_t seed = 0;
  int epochs = 0;
  float final_loss = 0.0f;
  std::vector<std::pair<std::string, Tensor>> tensors;
};

// Training-scale target transform: areas in units of size^2, lengths in units
// of size, so every regression output lives near [0,1].
Tensor normalize_targets(const IndexVector& v, int image_size);
IndexVector denormalize_targets(const Tensor& t, int image_size);

// One-hot [3,H,W] encoding of a label mask.
Tensor one_hot_mask(const Tensor& labels);

// A graph wired up to one of the three architectures. `taps` holds the
// post-relu, pre-pool activation of each conv block, in block order.
struct BuiltNet {
  Graph graph;
  Graph::NodeId input = -1;
  Graph::NodeId output = -1;
  Graph::NodeId target = -1;
  Graph::NodeId loss = -1;
  std::vector<Graph::NodeId> taps;
};

// Channel plans scale with base_width w (defaults w=16): DirectNet convs
// w/2w/4w/4w with fc1 8w; UNet encoder w/2w/4w with bottleneck 8w; MaskNet
// convs w/2w/4w with fc1 4w. Initialization is He-style from the rng stream
// in parameter creation order.
BuiltNet build_direct(int image_size, int batch, int base_width, Rng& rng);
BuiltNet build_unet(int image_size, int batch, int base_width, Rng& rng);
BuiltNet build_masknet(int image_size, int batch, int base_width, Rng& rng);

ModelWeights train_direct(const std::vector<Subject>& train, const TrainConfig& cfg);
ModelWeights train_unet(const std::vector<Subject>& train, const TrainConfig& cfg);
ModelWeights train_masknet(const std::vector<Subject>& train, const TrainConfig& cfg);

// Per-epoch mean training losses of the most recent train_* call on this
// thread, oldest first. Exposed for loss-curve assertions and reporting.
const std::vector<double>& last_train_losses();

// Reusable single-image predictor for DirectNet weights.
class DirectPredictor {
 public:
  explicit DirectPredictor(const ModelWeights& w);
  IndexVector predict(const Tensor& image);

 private:
  BuiltNet net_;
  int image_size_;
};

// UNet followed by mask cleanup and MaskNet, the segmentation-route
// estimator. predict returns the cleaned label mask and the index estimate.
class SegPredictor {
 public:
  SegPredictor(const ModelWeights& unet, const ModelWeights& masknet);
  std::pair<Tensor, IndexVector> predict(const Tensor& image);

  // The [3,H,W] class probabilities for the last predicted image.
  const Tensor& last_probs() const;

 private:
  BuiltNet unet_;
  BuiltNet masknet_;
  Tensor probs_;
  int image_size_;
};

IndexVector predict_direct(const ModelWeights& w, const Tensor& image);
std::pair<Tensor, IndexVector> predict_seg(const ModelWeights& unet, const ModelWeights& masknet,
                                           const Tensor& image);

// Renders the chosen conv block's post-relu activations ("conv1".."conv4")
// as a tiled PGM: ceil(sqrt(C)) tiles per row, channels min-max normalized
// to 8 bits (constant channels map to 0), 1-px white separators.
void export_feature_maps(const ModelWeights& direct, const Tensor& image,
                         const std::string& layer, const std::string& out_path);

// On-disk format: <stem>.weights.json manifest + <stem>.weights.bin blob of
// little-endian float32 in manifest order, checksummed with SHA-256.
void save_weights(const ModelWeights& w, const std::string& stem);
ModelWeights load_weights(const std::string& stem);

}  // namespace cq
