#include "cardioquant/models.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <numeric>
#include <unordered_map>
#include <utility>

#include <json.hpp>

#include "cardioquant/adam.hpp"
#include "cardioquant/errors.hpp"
#include "cardioquant/hash.hpp"
#include "cardioquant/pgm.hpp"

namespace cq {
namespace {

constexpr int kWeightFormatVersion = 1;
constexpr int kDefaultWidth = 16;
constexpr int kTargetCount = IndexVector::kCount;

thread_local std::vector<double> tl_epoch_losses;

Tensor normal_init(std::vector<int> shape, double stddev, Rng& rng) {
  Tensor t(std::move(shape));
  for (float& v : t.vec()) v = static_cast<float>(rng.normal() * stddev);
  return t;
}

// He initialization for relu layers (gain 2), Xavier-like for linear
// output layers (gain 1).
Tensor conv_init(int out_c, int in_c, double gain, Rng& rng) {
  return normal_init({out_c, in_c, 3, 3}, std::sqrt(gain / (static_cast<double>(in_c) * 9.0)),
                     rng);
}

Tensor dense_init(int in_d, int out_d, double gain, Rng& rng) {
  return normal_init({in_d, out_d}, std::sqrt(gain / static_cast<double>(in_d)), rng);
}

Graph::NodeId conv_layer(Graph& g, Graph::NodeId x, int in_c, int out_c, const std::string& name,
                         double gain, Rng& rng) {
  const Graph::NodeId k = g.parameter(name + ".kernel", conv_init(out_c, in_c, gain, rng));
  const Graph::NodeId b = g.parameter(name + ".bias", Tensor({out_c}));
  return g.conv2d(x, k, b);
}

Graph::NodeId conv_bn_relu(Graph& g, Graph::NodeId x, int in_c, int out_c,
                           const std::string& name, Rng& rng) {
  Graph::NodeId y = conv_layer(g, x, in_c, out_c, name, 2.0, rng);
  y = g.batch_norm(y, name + ".bn");
  return g.relu(y);
}

Graph::NodeId dense_layer(Graph& g, Graph::NodeId x, int in_d, int out_d,
                          const std::string& name, double gain, Rng& rng) {
  const Graph::NodeId w = g.parameter(name + ".weight", dense_init(in_d, out_d, gain, rng));
  const Graph::NodeId b = g.parameter(name + ".bias", Tensor({out_d}));
  return g.dense(x, w, b);
}

void check_build_args(const std::string& arch, int image_size, int batch, int base_width,
                      int divisor) {
  if (batch < 1) throw ValidationError(arch + " batch size must be at least 1");
  if (base_width < 1) throw ValidationError(arch + " base width must be at least 1");
  if (image_size < divisor || image_size % divisor != 0)
    throw ValidationError(arch + " input size must be a positive multiple of " +
                          std::to_string(divisor) + ", got " + std::to_string(image_size));
}

}  // namespace

TrainConfig direct_train_defaults() { return TrainConfig{}; }

TrainConfig unet_train_defaults() {
  TrainConfig c;
  c.batch = 8;
  c.epochs = 30;
  return c;
}

TrainConfig masknet_train_defaults() { return TrainConfig{}; }

Tensor normalize_targets(const IndexVector& v, int image_size) {
  if (image_size <= 0) throw ValidationError("image_size must be positive");
  Tensor t({kTargetCount});
  const float s = static_cast<float>(image_size);
  t.vec()[0] = v[0] / (s * s);
  t.vec()[1] = v[1] / (s * s);
  for (int i = 2; i < kTargetCount; ++i) t.vec()[static_cast<std::size_t>(i)] = v[i] / s;
  return t;
}

IndexVector denormalize_targets(const Tensor& t, int image_size) {
  if (image_size <= 0) throw ValidationError("image_size must be positive");
  if (t.rank() != 1 || t.dim(0) != kTargetCount)
    throw ShapeError("normalized targets must be a flat 11-vector");
  IndexVector v;
  const float s = static_cast<float>(image_size);
  v[0] = t.vec()[0] * s * s;
  v[1] = t.vec()[1] * s * s;
  for (int i = 2; i < kTargetCount; ++i) v[i] = t.vec()[static_cast<std::size_t>(i)] * s;
  return v;
}

Tensor one_hot_mask(const Tensor& labels) {
  if (labels.rank() != 2) throw ShapeError("label mask must be rank 2");
  const int h = labels.dim(0);
  const int w = labels.dim(1);
  Tensor out({3, h, w});
  const std::size_t plane = static_cast<std::size_t>(h) * static_cast<std::size_t>(w);
  for (std::size_t i = 0; i < plane; ++i) {
    const long cls = std::lround(labels.vec()[i]);
    if (cls < 0 || cls > 2)
      throw ValidationError("mask label " + std::to_string(labels.vec()[i]) +
                            " outside classes 0..2");
    out.vec()[static_cast<std::size_t>(cls) * plane + i] = 1.0f;
  }
  return out;
}

BuiltNet build_direct(int image_size, int batch, int base_width, Rng& rng) {
  check_build_args("direct", image_size, batch, base_width, 16);
  BuiltNet net;
  Graph& g = net.graph;
  net.input = g.input({batch, 1, image_size, image_size});
  const int plan[4] = {base_width, 2 * base_width, 4 * base_width, 4 * base_width};
  Graph::NodeId x = net.input;
  int in_c = 1;
  for (int k = 0; k < 4; ++k) {
    x = conv_bn_relu(g, x, in_c, plan[k], "conv" + std::to_string(k + 1), rng);
    net.taps.push_back(x);
    x = g.max_pool2(x);
    in_c = plan[k];
  }
  x = g.flatten(x);
  const int spatial = image_size / 16;
  const int flat = in_c * spatial * spatial;
  x = g.relu(dense_layer(g, x, flat, 8 * base_width, "fc1", 2.0, rng));
  net.output = dense_layer(g, x, 8 * base_width, kTargetCount, "fc2", 1.0, rng);
  net.target = g.input({batch, kTargetCount});
  net.loss = g.mse_loss(net.output, net.target);
  return net;
}

BuiltNet build_unet(int image_size, int batch, int base_width, Rng& rng) {
  check_build_args("unet", image_size, batch, base_width, 8);
  BuiltNet net;
  Graph& g = net.graph;
  net.input = g.input({batch, 1, image_size, image_size});
  Graph::NodeId x = net.input;
  int in_c = 1;
  Graph::NodeId skips[3] = {-1, -1, -1};
  int skip_c[3] = {0, 0, 0};
  for (int level = 0; level < 3; ++level) {
    const int c = base_width << level;
    const std::string name = "enc" + std::to_string(level + 1);
    x = conv_bn_relu(g, x, in_c, c, name + "a", rng);
    x = conv_bn_relu(g, x, c, c, name + "b", rng);
    skips[level] = x;
    skip_c[level] = c;
    net.taps.push_back(x);
    x = g.max_pool2(x);
    in_c = c;
  }
  const int bott = 8 * base_width;
  x = conv_bn_relu(g, x, in_c, bott, "bottleneck_a", rng);
  x = conv_bn_relu(g, x, bott, bott, "bottleneck_b", rng);
  in_c = bott;
  for (int level = 2; level >= 0; --level) {
    const int c = skip_c[level];
    const std::string name = "dec" + std::to_string(level + 1);
    x = g.upsample2_concat(x, skips[level]);
    x = conv_bn_relu(g, x, in_c + c, c, name + "a", rng);
    x = conv_bn_relu(g, x, c, c, name + "b", rng);
    in_c = c;
  }
  net.output = g.softmax_channels(conv_layer(g, x, in_c, 3, "head", 1.0, rng));
  net.target = g.input({batch, image_size, image_size});
  net.loss = g.cross_entropy_loss(net.output, net.target);
  return net;
}

BuiltNet build_masknet(int image_size, int batch, int base_width, Rng& rng) {
  check_build_args("masknet", image_size, batch, base_width, 8);
  BuiltNet net;
  Graph& g = net.graph;
  net.input = g.input({batch, 3, image_size, image_size});
  const int plan[3] = {base_width, 2 * base_width, 4 * base_width};
  Graph::NodeId x = net.input;
  int in_c = 3;
  for (int k = 0; k < 3; ++k) {
    x = conv_bn_relu(g, x, in_c, plan[k], "conv" + std::to_string(k + 1), rng);
    net.taps.push_back(x);
    x = g.max_pool2(x);
    in_c = plan[k];
  }
  x = g.flatten(x);
  const int spatial = image_size / 8;
  const int flat = in_c * spatial * spatial;
  x = g.relu(dense_layer(g, x, flat, 4 * base_width, "fc1", 2.0, rng));
  net.output = dense_layer(g, x, 4 * base_width, kTargetCount, "fc2", 1.0, rng);
  net.target = g.input({batch, kTargetCount});
  net.loss = g.mse_loss(net.output, net.target);
  return net;
}

namespace {

BuiltNet build_for(const std::string& arch, int image_size, int batch, int base_width, Rng& rng) {
  if (arch == "direct") return build_direct(image_size, batch, base_width, rng);
  if (arch == "unet") return build_unet(image_size, batch, base_width, rng);
  if (arch == "masknet") return build_masknet(image_size, batch, base_width, rng);
  throw ArchitectureMismatchError("unknown architecture tag '" + arch + "'");
}

void extract_weights(const Graph& g, ModelWeights& w) {
  for (const std::string& name : g.parameter_names()) w.tensors.emplace_back(name, g.param(name));
  for (const std::string& name : g.buffer_names()) w.tensors.emplace_back(name, g.buffer(name));
}

// Copies every tensor of `w` into the graph's parameters and buffers by
// name. The sets must match exactly, in both directions and in shape.
void apply_weights(Graph& g, const ModelWeights& w) {
  std::unordered_map<std::string, const Tensor*> byname;
  for (const auto& [name, t] : w.tensors)
    if (!byname.emplace(name, &t).second)
      throw ArchitectureMismatchError("weights list tensor '" + name + "' twice");
  std::size_t used = 0;
  const auto assign = [&](Tensor& dst, const std::string& name) {
    const auto it = byname.find(name);
    if (it == byname.end())
      throw ArchitectureMismatchError("weights are missing tensor '" + name + "'");
    if (it->second->shape() != dst.shape())
      throw ArchitectureMismatchError("tensor '" + name + "' does not match the architecture's shape");
    dst = *it->second;
    ++used;
  };
  for (const std::string& name : g.parameter_names()) assign(g.param(name), name);
  for (const std::string& name : g.buffer_names()) assign(g.buffer(name), name);
  if (used != byname.size())
    throw ArchitectureMismatchError("weights carry tensors the architecture does not define");
}

std::vector<const Frame*> collect_frames(const std::vector<Subject>& subjects) {
  std::vector<const Frame*> out;
  for (const Subject& s : subjects)
    for (const Frame& f : s.frames) out.push_back(&f);
  return out;
}

template <class Fill>
ModelWeights run_training(const std::string& arch, const std::vector<Subject>& subjects,
                          const TrainConfig& cfg, Fill&& fill) {
  if (cfg.batch < 1 || cfg.epochs < 1 || !(cfg.lr > 0.0))
    throw ValidationError(arch + " training config needs batch >= 1, epochs >= 1 and lr > 0");
  const std::vector<const Frame*> frames = collect_frames(subjects);
  if (frames.empty()) throw ValidationError(arch + " training needs at least one frame");
  const int size = frames.front()->labels.dim(0);
  for (const Frame* f : frames)
    if (f->labels.rank() != 2 || f->labels.dim(0) != size || f->labels.dim(1) != size)
      throw ValidationError(arch + " training set mixes image sizes");
  const int batch = std::min(cfg.batch, static_cast<int>(frames.size()));

  Rng init(mix_seed(cfg.seed, arch + "/init"));
  BuiltNet net = build_for(arch, size, batch, kDefaultWidth, init);
  Graph& g = net.graph;
  g.set_mode(Mode::Train);
  AdamState adam(static_cast<float>(cfg.lr));

  Tensor x(g.value(net.input).shape());
  Tensor y(g.value(net.target).shape());
  std::vector<std::size_t> order(frames.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  const std::size_t batches = frames.size() / static_cast<std::size_t>(batch);

  tl_epoch_losses.clear();
  for (int epoch = 1; epoch <= cfg.epochs; ++epoch) {
    Rng shuf(mix_seed(cfg.seed, arch + "/shuffle/" + std::to_string(epoch)));
    shuf.shuffle(order);
    double sum = 0.0;
    for (std::size_t b = 0; b < batches; ++b) {
      for (int slot = 0; slot < batch; ++slot)
        fill(*frames[order[b * static_cast<std::size_t>(batch) + static_cast<std::size_t>(slot)]],
             slot, x, y);
      g.set_value(net.input, x);
      g.set_value(net.target, y);
      g.forward();
      sum += static_cast<double>(g.value(net.loss).vec()[0]);
      g.backward(net.loss);
      adam.step(g);
    }
    const double mean = sum / static_cast<double>(batches);
    if (!std::isfinite(mean))
      throw TrainingError(arch + " loss became non-finite at epoch " + std::to_string(epoch));
    tl_epoch_losses.push_back(mean);
  }

  ModelWeights w;
  w.architecture = arch;
  w.image_size = size;
  w.base_width = kDefaultWidth;
  w.seed = cfg.seed;
  w.epochs = cfg.epochs;
  w.final_loss = static_cast<float>(tl_epoch_losses.back());
  extract_weights(g, w);
  return w;
}

void fill_image(const Frame& f, int slot, Tensor& x) {
  const std::size_t n = f.image.numel();
  std::copy_n(f.image.data(), n, x.vec().data() + static_cast<std::size_t>(slot) * n);
}

void fill_targets(const Frame& f, int slot, Tensor& y) {
  const Tensor t = normalize_targets(f.truth, f.labels.dim(0));
  std::copy_n(t.data(), static_cast<std::size_t>(kTargetCount),
              y.vec().data() + static_cast<std::size_t>(slot) * kTargetCount);
}

}  // namespace

ModelWeights train_direct(const std::vector<Subject>& train, const TrainConfig& cfg) {
  return run_training("direct", train, cfg, [](const Frame& f, int slot, Tensor& x, Tensor& y) {
    fill_image(f, slot, x);
    fill_targets(f, slot, y);
  });
}

ModelWeights train_unet(const std::vector<Subject>& train, const TrainConfig& cfg) {
  return run_training("unet", train, cfg, [](const Frame& f, int slot, Tensor& x, Tensor& y) {
    fill_image(f, slot, x);
    const std::size_t n = f.labels.numel();
    std::copy_n(f.labels.data(), n, y.vec().data() + static_cast<std::size_t>(slot) * n);
  });
}

ModelWeights train_masknet(const std::vector<Subject>& train, const TrainConfig& cfg) {
  return run_training("masknet", train, cfg, [](const Frame& f, int slot, Tensor& x, Tensor& y) {
    const Tensor oh = one_hot_mask(f.labels);
    std::copy_n(oh.data(), oh.numel(), x.vec().data() + static_cast<std::size_t>(slot) * oh.numel());
    fill_targets(f, slot, y);
  });
}

const std::vector<double>& last_train_losses() { return tl_epoch_losses; }

namespace {

int checked_image_size(const ModelWeights& w, const std::string& arch) {
  if (w.architecture != arch)
    throw ArchitectureMismatchError("expected " + arch + " weights, got '" + w.architecture + "'");
  if (w.image_size <= 0 || w.base_width <= 0)
    throw ArchitectureMismatchError(arch + " weights have no usable geometry metadata");
  return w.image_size;
}

void set_single_image(Graph& g, Graph::NodeId input, const Tensor& image, int size) {
  const std::size_t n = static_cast<std::size_t>(size) * static_cast<std::size_t>(size);
  const bool chw = image.rank() == 3 && image.dim(0) == 1 && image.dim(1) == size &&
                   image.dim(2) == size;
  const bool hw = image.rank() == 2 && image.dim(0) == size && image.dim(1) == size;
  if (!chw && !hw)
    throw ShapeError("image does not match the model's " + std::to_string(size) + "x" +
                     std::to_string(size) + " input");
  Tensor x({1, 1, size, size});
  std::copy_n(image.data(), n, x.vec().data());
  g.set_value(input, x);
}

IndexVector read_prediction(const Tensor& out, int size) {
  Tensor row({kTargetCount});
  std::copy_n(out.data(), static_cast<std::size_t>(kTargetCount), row.vec().data());
  IndexVector v = denormalize_targets(row, size);
  for (int i = 0; i < kTargetCount; ++i) {
    if (!std::isfinite(v[i]))
      throw ValidationError("prediction produced a non-finite value at index " + kIndexNames[i]);
    if (v[i] < 0.0f) v[i] = 0.0f;
  }
  return v;
}

}  // namespace

DirectPredictor::DirectPredictor(const ModelWeights& w)
    : image_size_(checked_image_size(w, "direct")) {
  Rng rng(0);
  net_ = build_direct(image_size_, 1, w.base_width, rng);
  apply_weights(net_.graph, w);
  net_.graph.set_mode(Mode::Infer);
}

IndexVector DirectPredictor::predict(const Tensor& image) {
  set_single_image(net_.graph, net_.input, image, image_size_);
  net_.graph.forward();
  return read_prediction(net_.graph.value(net_.output), image_size_);
}

SegPredictor::SegPredictor(const ModelWeights& unet, const ModelWeights& masknet)
    : image_size_(checked_image_size(unet, "unet")) {
  if (checked_image_size(masknet, "masknet") != image_size_)
    throw ArchitectureMismatchError("unet and masknet weights disagree on the image size");
  Rng r1(0);
  unet_ = build_unet(image_size_, 1, unet.base_width, r1);
  apply_weights(unet_.graph, unet);
  unet_.graph.set_mode(Mode::Infer);
  Rng r2(0);
  masknet_ = build_masknet(image_size_, 1, masknet.base_width, r2);
  apply_weights(masknet_.graph, masknet);
  masknet_.graph.set_mode(Mode::Infer);
}

std::pair<Tensor, IndexVector> SegPredictor::predict(const Tensor& image) {
  set_single_image(unet_.graph, unet_.input, image, image_size_);
  unet_.graph.forward();
  const Tensor& p = unet_.graph.value(unet_.output);
  probs_ = Tensor({3, image_size_, image_size_});
  std::copy_n(p.data(), probs_.numel(), probs_.vec().data());
  Tensor mask = mask_from_probs(probs_);

  const Tensor oh = one_hot_mask(mask);
  Tensor x({1, 3, image_size_, image_size_});
  std::copy_n(oh.data(), oh.numel(), x.vec().data());
  masknet_.graph.set_value(masknet_.input, x);
  masknet_.graph.forward();
  IndexVector v = read_prediction(masknet_.graph.value(masknet_.output), image_size_);
  return {std::move(mask), v};
}

const Tensor& SegPredictor::last_probs() const {
  if (probs_.rank() != 3) throw StateError("no image has been predicted yet");
  return probs_;
}

IndexVector predict_direct(const ModelWeights& w, const Tensor& image) {
  DirectPredictor p(w);
  return p.predict(image);
}

std::pair<Tensor, IndexVector> predict_seg(const ModelWeights& unet, const ModelWeights& masknet,
                                           const Tensor& image) {
  SegPredictor p(unet, masknet);
  return p.predict(image);
}

void export_feature_maps(const ModelWeights& direct, const Tensor& image,
                         const std::string& layer, const std::string& out_path) {
  int block = -1;
  if (layer.size() == 5 && layer.compare(0, 4, "conv") == 0 && layer[4] >= '1' && layer[4] <= '4')
    block = layer[4] - '1';
  if (block < 0)
    throw ValidationError("unknown feature layer '" + layer + "', expected conv1..conv4");

  const int size = checked_image_size(direct, "direct");
  Rng rng(0);
  BuiltNet net = build_direct(size, 1, direct.base_width, rng);
  apply_weights(net.graph, direct);
  net.graph.set_mode(Mode::Infer);
  set_single_image(net.graph, net.input, image, size);
  net.graph.forward();

  const Tensor& tap = net.graph.value(net.taps[static_cast<std::size_t>(block)]);
  const int channels = tap.dim(1);
  const int h = tap.dim(2);
  const int w = tap.dim(3);
  const int grid_w = static_cast<int>(std::ceil(std::sqrt(static_cast<double>(channels))));
  const int grid_h = (channels + grid_w - 1) / grid_w;
  const int out_w = grid_w * w + (grid_w - 1);
  const int out_h = grid_h * h + (grid_h - 1);
  std::vector<unsigned char> bytes(static_cast<std::size_t>(out_w) * static_cast<std::size_t>(out_h),
                                   255);
  const std::size_t plane = static_cast<std::size_t>(h) * static_cast<std::size_t>(w);
  for (int c = 0; c < channels; ++c) {
    const float* src = tap.data() + static_cast<std::size_t>(c) * plane;
    float mn = src[0];
    float mx = src[0];
    for (std::size_t i = 1; i < plane; ++i) {
      mn = std::min(mn, src[i]);
      mx = std::max(mx, src[i]);
    }
    const float range = mx - mn;
    const int x0 = (c % grid_w) * (w + 1);
    const int y0 = (c / grid_w) * (h + 1);
    for (int y = 0; y < h; ++y)
      for (int x = 0; x < w; ++x) {
        const float v = src[static_cast<std::size_t>(y) * static_cast<std::size_t>(w) +
                            static_cast<std::size_t>(x)];
        const long q = range > 0.0f ? std::lround((v - mn) / range * 255.0f) : 0;
        bytes[static_cast<std::size_t>(y0 + y) * static_cast<std::size_t>(out_w) +
              static_cast<std::size_t>(x0 + x)] = static_cast<unsigned char>(q);
      }
  }
  write_pgm(out_path, out_w, out_h, bytes);
}

void save_weights(const ModelWeights& w, const std::string& stem) {
  std::vector<std::uint8_t> blob;
  nlohmann::json tensors = nlohmann::json::array();
  std::size_t offset = 0;
  for (const auto& [name, t] : w.tensors) {
    tensors.push_back({{"name", name}, {"shape", t.shape()}, {"offset", offset}});
    const std::size_t bytes = t.numel() * sizeof(float);
    blob.resize(offset + bytes);
    std::memcpy(blob.data() + offset, t.data(), bytes);
    offset += bytes;
  }

  nlohmann::json manifest;
  manifest["format_version"] = kWeightFormatVersion;
  manifest["architecture"] = w.architecture;
  manifest["image_size"] = w.image_size;
  manifest["base_width"] = w.base_width;
  manifest["training"] = {{"seed", w.seed}, {"epochs", w.epochs}, {"final_loss", w.final_loss}};
  manifest["tensors"] = std::move(tensors);
  manifest["blob_bytes"] = offset;
  manifest["blob_sha256"] = sha256_hex(blob);

  const std::string bin_path = stem + ".weights.bin";
  {
    std::ofstream out(bin_path, std::ios::binary);
    if (!out) throw IoError("cannot open " + bin_path + " for writing");
    out.write(reinterpret_cast<const char*>(blob.data()), static_cast<std::streamsize>(blob.size()));
    if (!out) throw IoError("short write to " + bin_path);
  }
  const std::string json_path = stem + ".weights.json";
  std::ofstream out(json_path);
  if (!out) throw IoError("cannot open " + json_path + " for writing");
  out << manifest.dump(2) << "\n";
  if (!out) throw IoError("short write to " + json_path);
}

ModelWeights load_weights(const std::string& stem) {
  const std::string json_path = stem + ".weights.json";
  std::ifstream jf(json_path);
  if (!jf) throw IoError("cannot open " + json_path);
  nlohmann::json manifest;
  try {
    jf >> manifest;
  } catch (const nlohmann::json::exception& e) {
    throw ParseError(json_path + ": " + e.what());
  }

  ModelWeights w;
  std::size_t blob_bytes = 0;
  std::string blob_sha;
  std::vector<std::tuple<std::string, std::vector<int>, std::size_t>> entries;
  try {
    const int version = manifest.at("format_version").get<int>();
    if (version != kWeightFormatVersion)
      throw FormatVersionError("weight format version " + std::to_string(version) +
                               " is not supported (expected " +
                               std::to_string(kWeightFormatVersion) + ")");
    w.architecture = manifest.at("architecture").get<std::string>();
    w.image_size = manifest.at("image_size").get<int>();
    w.base_width = manifest.at("base_width").get<int>();
    const nlohmann::json& tr = manifest.at("training");
    w.seed = tr.at("seed").get<std::uint64_t>();
    w.epochs = tr.at("epochs").get<int>();
    w.final_loss = tr.at("final_loss").get<float>();
    blob_bytes = manifest.at("blob_bytes").get<std::size_t>();
    blob_sha = manifest.at("blob_sha256").get<std::string>();
    for (const nlohmann::json& e : manifest.at("tensors")) {
      entries.emplace_back(e.at("name").get<std::string>(), e.at("shape").get<std::vector<int>>(),
                           e.at("offset").get<std::size_t>());
    }
  } catch (const nlohmann::json::exception& e) {
    throw ParseError(json_path + ": " + e.what());
  }

  const std::string bin_path = stem + ".weights.bin";
  std::ifstream bf(bin_path, std::ios::binary);
  if (!bf) throw IoError("cannot open " + bin_path);
  std::vector<std::uint8_t> blob((std::istreambuf_iterator<char>(bf)),
                                 std::istreambuf_iterator<char>());
  if (blob.size() != blob_bytes)
    throw ParseError(bin_path + " holds " + std::to_string(blob.size()) +
                     " bytes but the manifest declares " + std::to_string(blob_bytes));
  if (sha256_hex(blob) != blob_sha)
    throw ChecksumError("weight blob " + bin_path + " does not match its manifest checksum");

  for (const auto& [name, shape, off] : entries) {
    if (shape.empty()) throw ParseError(json_path + ": tensor '" + name + "' has an empty shape");
    std::size_t numel = 1;
    for (int d : shape) {
      if (d <= 0) throw ParseError(json_path + ": tensor '" + name + "' has a non-positive dim");
      numel *= static_cast<std::size_t>(d);
    }
    const std::size_t bytes = numel * sizeof(float);
    if (off > blob.size() || bytes > blob.size() - off)
      throw ParseError(json_path + ": tensor '" + name + "' extends past the weight blob");
    Tensor t(shape);
    std::memcpy(t.vec().data(), blob.data() + off, bytes);
    w.tensors.emplace_back(name, std::move(t));
  }

  if (w.image_size < 8 || w.image_size > 256 || w.base_width < 1 || w.base_width > 128)
    throw ParseError(json_path + ": model geometry out of the supported range");
  Rng rng(0);
  BuiltNet ref;
  try {
    ref = build_for(w.architecture, w.image_size, 1, w.base_width, rng);
  } catch (const ValidationError& e) {
    throw ArchitectureMismatchError("weights declare an impossible geometry: " +
                                    std::string(e.what()));
  }
  apply_weights(ref.graph, w);
  return w;
}

}  // namespace cq
