#pragma once

#include <string>
#include <string_view>

#include "wrp/network.hpp"

namespace wrp {

/// Builds a network from a dash-separated spec such as
/// "C6(5x5)-P(2x2)-C16(5x5)-P(2x2)-F120-F84-F10".
///
///   C<ch>(<k1>x<k2>)   valid convolution followed by ReLU
///   P(<k>x<k>)         non-overlapping max pooling
///   F<units>           fully connected; ReLU follows unless it is the last token
///   ...BN              suffix on C/F tokens inserts batch normalization before the ReLU
///
/// Throws ParseError naming the first malformed token or the token whose shape does not fit.
Network parse_architecture(std::string_view spec, const Shape& input_shape);

/// Canonical spec string of a network built by parse_architecture.
std::string architecture_string(const Network& net);

/// Adds the BN suffix to every C/F token except the final one.
std::string with_batchnorm(std::string_view spec);
/// Removes every BN suffix.
std::string without_batchnorm(std::string_view spec);

}  // namespace wrp
