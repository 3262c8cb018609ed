#include "dil/net.hpp"

#include <bit>
#include <cmath>
#include <fstream>
#include <sstream>

#include "dil/rng.hpp"

namespace dil {

void NetConfig::validate() const {
  if (in_channels == 0 || hidden_channels == 0 || num_layers == 0 || kernel_size == 0) {
    throw std::invalid_argument("net config: channel, layer and kernel counts must be positive");
  }
  if (kernel_size % 2 == 0) throw std::invalid_argument("net config: kernel_size must be odd");
  if (residual && num_layers < 2) throw std::invalid_argument("net config: residual nets need num_layers >= 2");
}

std::vector<std::pair<std::size_t, std::size_t>> NetConfig::layer_channels() const {
  std::vector<std::pair<std::size_t, std::size_t>> out;
  for (std::size_t l = 0; l < num_layers; ++l) {
    const std::size_t in = l == 0 ? in_channels : hidden_channels;
    const std::size_t o = l + 1 == num_layers ? in_channels : hidden_channels;
    out.emplace_back(in, o);
  }
  return out;
}

std::size_t NetConfig::parameter_count() const {
  std::size_t n = 0;
  for (auto [in, out] : layer_channels()) n += out * in * kernel_size * kernel_size + out;
  return n;
}

ParamVector parameter_layout(const NetConfig& config) {
  config.validate();
  std::vector<std::string> names;
  std::vector<Tensor> tensors;
  const std::size_t k = config.kernel_size;
  const auto layers = config.layer_channels();
  for (std::size_t l = 0; l < layers.size(); ++l) {
    const auto [in, out] = layers[l];
    names.push_back("conv" + std::to_string(l + 1) + ".weight");
    tensors.push_back(Tensor::zeros({out, in, k, k}));
    names.push_back("conv" + std::to_string(l + 1) + ".bias");
    tensors.push_back(Tensor::zeros({out}));
  }
  return ParamVector::flatten(names, tensors);
}

RestorationNet RestorationNet::init(const NetConfig& config, std::uint64_t seed) {
  ParamVector p = parameter_layout(config);
  Rng rng(seed);
  for (const Segment& s : p.segments()) {
    if (s.shape.size() != 4) continue;  // biases stay zero
    const double fan_in = static_cast<double>(s.shape[1] * s.shape[2] * s.shape[3]);
    const double stddev = std::sqrt(2.0 / fan_in);
    for (std::size_t i = 0; i < s.size(); ++i) p[s.offset + i] = stddev * rng.normal();
  }
  return RestorationNet(config, std::move(p));
}

RestorationNet::RestorationNet(NetConfig config, ParamVector params)
    : config_(config), params_(std::move(params)) {
  if (!params_.same_layout(parameter_layout(config_))) {
    throw std::invalid_argument("parameters do not match the network layout (" + std::to_string(params_.size()) +
                                " values, expected " + std::to_string(config_.parameter_count()) + ")");
  }
}

RestorationNet RestorationNet::with_params(ParamVector theta) const {
  if (theta.size() != params_.size()) {
    throw std::invalid_argument("with_params: got " + std::to_string(theta.size()) + " values, network has " +
                                std::to_string(params_.size()));
  }
  if (!theta.same_layout(params_)) theta = ParamVector::with_values(params_, {theta.values().begin(), theta.values().end()});
  return RestorationNet(config_, std::move(theta));
}

Tensor RestorationNet::forward(const Tensor& x) const {
  const std::vector<Tensor> p = params_.unflatten();
  return forward(x, p);
}

Tensor RestorationNet::forward(const Tensor& x, std::span<const Tensor> params) const {
  const std::size_t k = config_.kernel_size;
  if (x.rank() != 4 || x.dim(1) != config_.in_channels || x.dim(2) < k || x.dim(3) < k) {
    throw ShapeError("forward: expected [batch, " + std::to_string(config_.in_channels) + ", h>=" + std::to_string(k) +
                     ", w>=" + std::to_string(k) + "], got " + shape_string(x.shape()));
  }
  if (params.size() != 2 * config_.num_layers) throw std::invalid_argument("forward: wrong number of parameter tensors");
  Tensor h = x;
  for (std::size_t l = 0; l < config_.num_layers; ++l) {
    if (k > 1) h = pad_reflect(h, k / 2);
    h = conv2d(h, params[2 * l], params[2 * l + 1]);
    if (l + 1 < config_.num_layers) h = relu(h);
  }
  return config_.residual ? add(x, h) : h;
}

void append_le_doubles(std::string& out, std::span<const double> values) {
  for (double v : values) {
    const auto bits = std::bit_cast<std::uint64_t>(v);
    for (int b = 0; b < 8; ++b) out.push_back(static_cast<char>((bits >> (8 * b)) & 0xFF));
  }
}

std::vector<double> read_le_doubles(const std::string& in, std::size_t& pos, std::size_t count) {
  if (pos + 8 * count > in.size()) throw std::runtime_error("truncated binary payload");
  std::vector<double> out(count);
  for (std::size_t i = 0; i < count; ++i) {
    std::uint64_t bits = 0;
    for (int b = 0; b < 8; ++b) bits |= static_cast<std::uint64_t>(static_cast<unsigned char>(in[pos++])) << (8 * b);
    out[i] = std::bit_cast<double>(bits);
  }
  return out;
}

namespace {

std::string read_line(const std::string& in, std::size_t& pos) {
  const std::size_t end = in.find('\n', pos);
  if (end == std::string::npos) throw std::runtime_error("checkpoint: unexpected end of header");
  std::string line = in.substr(pos, end - pos);
  pos = end + 1;
  return line;
}

}  // namespace

std::string encode_checkpoint(const RestorationNet& net) {
  const NetConfig& c = net.config();
  std::string out = "DILNET v1\n";
  out += "config " + std::to_string(c.in_channels) + " " + std::to_string(c.hidden_channels) + " " +
         std::to_string(c.num_layers) + " " + std::to_string(c.kernel_size) + " " + (c.residual ? "1" : "0") + "\n";
  const ParamVector& p = net.params();
  for (const Segment& s : p.segments()) {
    out += s.name + " " + std::to_string(s.shape.size());
    for (std::size_t d : s.shape) out += " " + std::to_string(d);
    out += "\n";
    append_le_doubles(out, p.values().subspan(s.offset, s.size()));
  }
  return out;
}

RestorationNet decode_checkpoint(const std::string& bytes) {
  std::size_t pos = 0;
  if (read_line(bytes, pos) != "DILNET v1") throw std::runtime_error("checkpoint: missing 'DILNET v1' header");
  std::istringstream cfg(read_line(bytes, pos));
  std::string tag;
  NetConfig c;
  int residual = 0;
  cfg >> tag >> c.in_channels >> c.hidden_channels >> c.num_layers >> c.kernel_size >> residual;
  if (!cfg || tag != "config") throw std::runtime_error("checkpoint: malformed config line");
  c.residual = residual != 0;
  c.validate();
  ParamVector layout = parameter_layout(c);
  std::vector<double> values(layout.size());
  for (const Segment& s : layout.segments()) {
    std::istringstream seg(read_line(bytes, pos));
    std::string name;
    std::size_t rank = 0;
    seg >> name >> rank;
    Shape shape(rank);
    for (auto& d : shape) seg >> d;
    if (!seg || name != s.name || shape != s.shape) {
      throw std::runtime_error("checkpoint: segment '" + name + "' does not match expected '" + s.name + "' " +
                               shape_string(s.shape));
    }
    const auto v = read_le_doubles(bytes, pos, s.size());
    std::copy(v.begin(), v.end(), values.begin() + static_cast<std::ptrdiff_t>(s.offset));
  }
  if (pos != bytes.size()) throw std::runtime_error("checkpoint: trailing bytes");
  return RestorationNet(c, ParamVector::with_values(layout, std::move(values)));
}

void save_checkpoint(const RestorationNet& net, const std::filesystem::path& path) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("cannot write checkpoint " + path.string());
  const std::string bytes = encode_checkpoint(net);
  f.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
}

RestorationNet load_checkpoint(const std::filesystem::path& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("cannot read checkpoint " + path.string());
  std::ostringstream ss;
  ss << f.rdbuf();
  return decode_checkpoint(ss.str());
}

}  // namespace dil
