#include "wrp/architecture.hpp"

#include <regex>
#include <sstream>
#include <vector>

#include "wrp/errors.hpp"

namespace wrp {

namespace {

std::vector<std::string> split_tokens(std::string_view spec) {
  std::vector<std::string> tokens;
  std::string current;
  for (char ch : spec) {
    if (ch == ' ' || ch == '\t') continue;
    if (ch == '-') {
      tokens.push_back(current);
      current.clear();
    } else {
      current.push_back(ch);
    }
  }
  tokens.push_back(current);
  return tokens;
}

std::size_t to_count(const std::string& token, const std::string& digits) {
  try {
    const unsigned long v = std::stoul(digits);
    if (v == 0) throw ParseError(token, "extents must be positive");
    return static_cast<std::size_t>(v);
  } catch (const std::out_of_range&) {
    throw ParseError(token, "number out of range");
  }
}

}  // namespace

Network parse_architecture(std::string_view spec, const Shape& input_shape) {
  static const std::regex conv_re(R"(C(\d+)\((\d+)x(\d+)\)(BN)?)");
  static const std::regex pool_re(R"(P\((\d+)x(\d+)\))");
  static const std::regex fc_re(R"(F(\d+)(BN)?)");

  Network net(input_shape);
  const std::vector<std::string> tokens = split_tokens(spec);
  for (std::size_t t = 0; t < tokens.size(); ++t) {
    const std::string& tok = tokens[t];
    const bool last = t + 1 == tokens.size();
    std::smatch m;
    try {
      if (std::regex_match(tok, m, conv_re)) {
        net.add_conv(to_count(tok, m[1]), to_count(tok, m[2]), to_count(tok, m[3]));
        if (m[4].matched) net.add_batchnorm();
        net.add_activation(Activation::relu);
      } else if (std::regex_match(tok, m, pool_re)) {
        const std::size_t a = to_count(tok, m[1]), b = to_count(tok, m[2]);
        if (a != b) throw ParseError(tok, "only square pooling windows are supported");
        net.add_maxpool(a);
      } else if (std::regex_match(tok, m, fc_re)) {
        net.add_linear(to_count(tok, m[1]));
        if (m[2].matched) net.add_batchnorm();
        if (!last) net.add_activation(Activation::relu);
      } else {
        throw ParseError(tok, "unrecognized token");
      }
    } catch (const DimensionError& e) {
      throw ParseError(tok, e.what());
    }
  }
  if (net.output_shape().size() != 1) {
    throw ParseError(tokens.back(), "network must end with a fully connected layer");
  }
  return net;
}

std::string architecture_string(const Network& net) {
  std::ostringstream os;
  const auto& layers = net.layers();
  bool first = true;
  for (std::size_t i = 0; i < layers.size(); ++i) {
    const Layer& l = layers[i];
    const bool bn_next = i + 1 < layers.size() && layers[i + 1].kind == LayerKind::batchnorm;
    switch (l.kind) {
      case LayerKind::conv:
        os << (first ? "" : "-") << 'C' << l.params.fanout << '(' << l.params.weights.shape()[2]
           << 'x' << l.params.weights.shape()[3] << ')' << (bn_next ? "BN" : "");
        first = false;
        break;
      case LayerKind::linear:
        os << (first ? "" : "-") << 'F' << l.params.fanout << (bn_next ? "BN" : "");
        first = false;
        break;
      case LayerKind::maxpool:
        os << (first ? "" : "-") << "P(" << l.window << 'x' << l.window << ')';
        first = false;
        break;
      default:
        break;
    }
  }
  return os.str();
}

std::string with_batchnorm(std::string_view spec) {
  std::vector<std::string> tokens = split_tokens(without_batchnorm(spec));
  std::size_t last_trainable = tokens.size();
  for (std::size_t t = 0; t < tokens.size(); ++t) {
    if (!tokens[t].empty() && (tokens[t][0] == 'C' || tokens[t][0] == 'F')) last_trainable = t;
  }
  std::string out;
  for (std::size_t t = 0; t < tokens.size(); ++t) {
    if (t) out += '-';
    out += tokens[t];
    if (t != last_trainable && !tokens[t].empty() && (tokens[t][0] == 'C' || tokens[t][0] == 'F')) {
      out += "BN";
    }
  }
  return out;
}

std::string without_batchnorm(std::string_view spec) {
  std::string out;
  for (const std::string& tok : split_tokens(spec)) {
    if (!out.empty()) out += '-';
    std::string t = tok;
    if (t.size() >= 2 && t.compare(t.size() - 2, 2, "BN") == 0) t.resize(t.size() - 2);
    out += t;
  }
  return out;
}

}  // namespace wrp
