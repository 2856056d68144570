#include "topoforge/net.hpp"

#include <fstream>

namespace topoforge::net {

using nlohmann::json;

std::string to_string(Variant v) {
  switch (v) {
    case Variant::proposed: return "proposed";
    case Variant::proposed_no_bn: return "proposed-no-bn";
    case Variant::yu_baseline: return "yu-baseline";
  }
  return "?";
}

Variant parse_variant(const std::string& name) {
  for (Variant v : {Variant::proposed, Variant::proposed_no_bn, Variant::yu_baseline}) {
    if (name == to_string(v)) return v;
  }
  throw ParameterError("unknown variant '" + name + "' (expected proposed, proposed-no-bn or yu-baseline)");
}

json ArchitectureConfig::to_json() const {
  return {{"variant", to_string(variant)},
          {"encoder", encoder},
          {"decoder", decoder},
          {"spade_hidden", spade_hidden},
          {"resolution", resolution}};
}

ArchitectureConfig ArchitectureConfig::from_json(const json& j) {
  try {
    ArchitectureConfig c;
    c.variant = parse_variant(j.at("variant").get<std::string>());
    c.encoder = j.at("encoder").get<std::array<int, 3>>();
    c.decoder = j.at("decoder").get<std::array<int, 4>>();
    c.spade_hidden = j.at("spade_hidden").get<int>();
    c.resolution = j.at("resolution").get<int>();
    return c;
  } catch (const json::exception& e) {
    throw LoadError(std::string("malformed architecture config: ") + e.what());
  }
}

template <typename T>
ModelInput<T> make_input(std::span<const simp::DesignSpec> specs) {
  if (specs.empty()) throw ParameterError("make_input: empty batch");
  const int h = static_cast<int>(specs[0].mask.rows());
  const int w = static_cast<int>(specs[0].mask.cols());
  ModelInput<T> in{Tensor<T>(static_cast<int>(specs.size()), 3, h, w), {}};
  for (std::size_t n = 0; n < specs.size(); ++n) {
    const auto& s = specs[n];
    if (s.mask.rows() != h || s.mask.cols() != w) throw ParameterError("make_input: mixed grid sizes");
    for (int y = 0; y < h; ++y) {
      for (int x = 0; x < w; ++x) {
        in.x.at(n, 0, y, x) = static_cast<T>(s.mask(y, x));
        in.x.at(n, 1, y, x) = static_cast<T>(s.fx(y, x));
        in.x.at(n, 2, y, x) = static_cast<T>(s.fy(y, x));
      }
    }
    in.volfrac.push_back(static_cast<T>(s.volfrac));
  }
  return in;
}

template <typename T>
Tensor<T> mask_stack(const ModelInput<T>& input) {
  if (input.x.c() != 3) throw ParameterError("mask_stack: input needs 3 channels");
  if (input.volfrac.size() != static_cast<std::size_t>(input.x.n())) {
    throw ParameterError("mask_stack: one volume fraction per sample required");
  }
  Tensor<T> m = input.x;
  for (int n = 0; n < m.n(); ++n) {
    T* p = m.plane_ptr(n, 0);
    for (std::size_t i = 0; i < m.plane(); ++i) p[i] *= input.volfrac[n];
  }
  return m;
}

template <typename T>
Tensor<T> inject_volfrac(const Tensor<T>& feat, const std::vector<T>& volfrac) {
  if (volfrac.size() != static_cast<std::size_t>(feat.n())) {
    throw ParameterError("inject_volfrac: one volume fraction per sample required");
  }
  Tensor<T> plane(feat.n(), 1, feat.h(), feat.w());
  for (int n = 0; n < feat.n(); ++n) std::fill_n(plane.plane_ptr(n, 0), plane.plane(), volfrac[n]);
  return nn::concat_channels(feat, plane);
}

template <typename T>
TopoNet<T>::TopoNet(ArchitectureConfig config, std::uint64_t seed) : config_(config) {
  if (config_.resolution % 8 != 0 || config_.resolution < 8) {
    throw ParameterError("resolution must be a multiple of 8");
  }
  Rng rng(seed);
  int in = 3;
  for (int width : config_.encoder) {
    EncoderStage st{nn::Conv2d<T>(in, width, 3, 1), std::nullopt, {}, {}};
    st.conv.init(rng);
    if (config_.encoder_bn()) st.bn.emplace(width, true);
    encoder_.push_back(std::move(st));
    in = width;
  }
  feat_channels_ = in;
  in += 1;
  for (int width : config_.decoder) {
    std::unique_ptr<nn::DecoderBlock<T>> block;
    if (config_.spade()) {
      block = std::make_unique<nn::SpadeResBlock<T>>(in, width, 3, config_.spade_hidden);
    } else {
      block = std::make_unique<nn::ConvReluBlock<T>>(in, width);
    }
    block->init(rng);
    decoder_.push_back(std::move(block));
    in = width;
  }
  head_ = nn::Conv2d<T>(in, 1, 3, 1);
  head_.init(rng);
}

template <typename T>
Tensor<T> TopoNet<T>::encode(const Tensor<T>& x) {
  if (x.c() != 3 || x.h() != config_.resolution || x.w() != config_.resolution) {
    throw ParameterError("encode: expected (N,3," + std::to_string(config_.resolution) + "," +
                         std::to_string(config_.resolution) + "), got " + x.shape_string());
  }
  Tensor<T> h = x;
  for (auto& st : encoder_) {
    h = st.conv.forward(h);
    if (st.bn) h = st.bn->forward(h);
    st.relu_out = nn::relu_forward(h);
    h = nn::maxpool2_forward(st.relu_out, st.argmax);
  }
  return h;
}

template <typename T>
Tensor<T> TopoNet<T>::decode(const Tensor<T>& feat, const Tensor<T>& stack) {
  Tensor<T> h = feat;
  upsampled_.assign(decoder_.size(), false);
  for (std::size_t i = 0; i < decoder_.size(); ++i) {
    if (i > 0 && h.h() < config_.resolution) {
      h = nn::upsample2_forward(h);
      upsampled_[i] = true;
    }
    const Tensor<T> m = nn::resize_nearest(stack, h.h(), h.w());
    h = decoder_[i]->forward(h, m);
  }
  out_ = nn::sigmoid_forward(head_.forward(h));
  return out_;
}

template <typename T>
Tensor<T> TopoNet<T>::forward(const ModelInput<T>& input) {
  const Tensor<T> stack = mask_stack(input);
  return decode(inject_volfrac(encode(input.x), input.volfrac), stack);
}

template <typename T>
void TopoNet<T>::backward(const Tensor<T>& dy) {
  if (out_.empty()) throw StateError("backward before forward");
  Tensor<T> d = head_.backward(nn::sigmoid_backward(dy, out_));
  for (std::size_t i = decoder_.size(); i-- > 0;) {
    d = decoder_[i]->backward(d);
    if (upsampled_[i]) d = nn::upsample2_backward(d);
  }
  d = nn::split_channels(d, feat_channels_).first;
  for (std::size_t i = encoder_.size(); i-- > 0;) {
    auto& st = encoder_[i];
    d = nn::maxpool2_backward(d, st.argmax, st.relu_out.dims());
    d = nn::relu_backward(d, st.relu_out);
    if (st.bn) d = st.bn->backward(d);
    d = st.conv.backward(d, i > 0);
  }
}

template <typename T>
void TopoNet<T>::set_training(bool on) {
  training_ = on;
  for (auto& st : encoder_) {
    if (st.bn) st.bn->set_training(on);
  }
  for (auto& b : decoder_) b->set_training(on);
}

template <typename T>
ParamList<T> TopoNet<T>::parameters() {
  ParamList<T> out;
  for (std::size_t i = 0; i < encoder_.size(); ++i) {
    const std::string p = "encoder." + std::to_string(i);
    encoder_[i].conv.collect(p + ".conv", out);
    if (encoder_[i].bn) encoder_[i].bn->collect(p + ".bn", out);
  }
  for (std::size_t i = 0; i < decoder_.size(); ++i) decoder_[i]->collect("decoder." + std::to_string(i), out);
  head_.collect("head", out);
  return out;
}

template <typename T>
void TopoNet<T>::for_each_norm(const std::function<void(nn::BatchNorm2d<T>&)>& fn) {
  for (auto& st : encoder_) {
    if (st.bn) fn(*st.bn);
  }
  for (auto& b : decoder_) b->for_each_norm(fn);
}

template <typename T>
void TopoNet<T>::zero_grad() {
  for (auto& p : parameters()) {
    if (p.trainable()) p.grad->fill(T(0));
  }
}

template <typename T>
std::size_t TopoNet<T>::trainable_count() {
  std::size_t n = 0;
  for (auto& p : parameters()) {
    if (p.trainable()) n += p.value->size();
  }
  return n;
}

template struct ModelInput<float>;
template struct ModelInput<double>;
template ModelInput<float> make_input(std::span<const simp::DesignSpec>);
template ModelInput<double> make_input(std::span<const simp::DesignSpec>);
template Tensor<float> mask_stack(const ModelInput<float>&);
template Tensor<double> mask_stack(const ModelInput<double>&);
template Tensor<float> inject_volfrac(const Tensor<float>&, const std::vector<float>&);
template Tensor<double> inject_volfrac(const Tensor<double>&, const std::vector<double>&);
template class TopoNet<float>;
template class TopoNet<double>;

// ---- persistence

namespace {

std::filesystem::path sidecar(const std::filesystem::path& p) {
  return std::filesystem::path(p.string() + ".json");
}

}  // namespace

void save_model(const std::filesystem::path& path, TopoNet<float>& net, const json& meta) {
  const ParamList<float> params = net.parameters();
  const std::string variant = to_string(net.config().variant);
  nn::save_checkpoint(path, variant, params);
  json j = meta;
  j["architecture"] = net.config().to_json();
  j["architecture_hash"] = nn::architecture_hash(variant, params);
  j["trainable_parameters"] = net.trainable_count();
  std::ofstream out(sidecar(path));
  if (!out) throw FormatError("cannot write " + sidecar(path).string());
  out << j.dump(2) << "\n";
}

json read_model_meta(const std::filesystem::path& path) {
  std::ifstream in(sidecar(path));
  if (!in) throw LoadError("missing checkpoint metadata " + sidecar(path).string());
  try {
    return json::parse(in);
  } catch (const json::exception& e) {
    throw LoadError(sidecar(path).string() + ": " + e.what());
  }
}

std::unique_ptr<TopoNet<float>> load_model(const std::filesystem::path& path,
                                           std::optional<Variant> expected) {
  const json meta = read_model_meta(path);
  if (!meta.contains("architecture")) throw LoadError(sidecar(path).string() + ": no architecture entry");
  const ArchitectureConfig cfg = ArchitectureConfig::from_json(meta["architecture"]);
  if (expected && *expected != cfg.variant) {
    throw LoadError(path.string() + " holds a '" + to_string(cfg.variant) + "' model, expected '" +
                    to_string(*expected) + "'");
  }
  auto net = std::make_unique<TopoNet<float>>(cfg);
  ParamList<float> params = net->parameters();
  nn::load_checkpoint(path, to_string(cfg.variant), params);
  // Loaded running statistics are valid even though this process never trained.
  net->for_each_norm([](nn::BatchNorm2d<float>& bn) { bn.state.stats_ready = true; });
  net->set_training(false);
  return net;
}

simp::Field to_field(const Tensor<float>& out, int sample) {
  simp::Field f(out.h(), out.w());
  for (int y = 0; y < out.h(); ++y) {
    for (int x = 0; x < out.w(); ++x) f(y, x) = out.at(sample, 0, y, x);
  }
  return f;
}

Predictor::Predictor(const std::filesystem::path& checkpoint, std::optional<Variant> expected)
    : net_(load_model(checkpoint, expected)) {}

Predictor::Predictor(std::unique_ptr<TopoNet<float>> net) : net_(std::move(net)) {
  if (!net_) throw ParameterError("Predictor: null network");
  net_->set_training(false);
}

Prediction Predictor::predict(const simp::DesignSpec& spec) {
  spec.validate();
  const auto t0 = std::chrono::steady_clock::now();
  const auto in = make_input<float>(std::span<const simp::DesignSpec>(&spec, 1));
  const Tensor<float> out = net_->forward(in);
  Prediction p;
  p.density = to_field(out, 0);
  p.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  return p;
}

std::vector<simp::Field> Predictor::predict_batch(std::span<const simp::DesignSpec> specs) {
  for (const auto& s : specs) s.validate();
  const Tensor<float> out = net_->forward(make_input<float>(specs));
  std::vector<simp::Field> fields;
  for (int n = 0; n < out.n(); ++n) fields.push_back(to_field(out, n));
  return fields;
}

}  // namespace topoforge::net
