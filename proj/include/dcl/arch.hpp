#pragma once

#include <cstddef>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "dcl/dcl_config.hpp"
#include "dcl/tensor.hpp"

namespace dcl {

enum class LayerKind { Conv, MaxPool, FullyConnected, ReLU, Dropout, DclBlock, SoftmaxLoss };

const char* to_string(LayerKind k);

struct LayerSpec {
  LayerKind kind = LayerKind::ReLU;
  std::size_t kernel = 1, stride = 1, pad = 0;
  std::size_t filters = 0;  // K2 for Conv / FullyConnected
  double drop_ratio = 0.0;  // Dropout only
  bool relu = false;        // Conv / FullyConnected followed by a fused ReLU
  std::optional<DclConfig> dcl;

  // Rendering hints so that render_arch reproduces the token as written.
  bool is_out = false;        // written as OUT
  bool show_stride = false;   // C<k>(S..) / DCL(..S..)
  bool show_pad = false;      // C<k>(..P..) / DCL(..P..)
  bool paren_stride = false;  // MP<k>(S<s>) instead of MP<k>S<s>
  bool show_fused = true;     // DCL .../<K2>
  bool show_strategy = false; // DCL<T>D / DCL<T>S

  bool has_params() const noexcept {
    return kind == LayerKind::Conv || kind == LayerKind::FullyConnected || kind == LayerKind::DclBlock;
  }
};

// Layer sequence with chained shapes. shapes[i] is the per-sample input
// shape (CHW) of layers[i]; shapes.back() is the final output.
struct NetworkSpec {
  std::vector<LayerSpec> layers;
  Shape input_shape;
  std::size_t num_classes = 0;
  std::vector<Shape> shapes;
  std::vector<std::string> names;     // conv1, fc3, dcl3, pool2, drop5, loss ...
  std::vector<std::string> warnings;  // e.g. DCL blocks over the filter budget
  // Network input is (x - input_shift) * input_scale; identity unless set by training.
  double input_shift = 0.0, input_scale = 1.0;

  std::size_t size() const noexcept { return layers.size(); }
  // Index of the layer with the given name; throws UnknownLayer.
  std::size_t index_of(std::string_view name) const;
};

// Parses `C5@20-MP2S2-C5@50-MP2S2-FC500-D0.5-OUT` style strings. Tokens:
//   C<k>[(S<s>P<p>)]@<n>  MP<k>[S<s> | (S<s>)]  FC<n>  D<r>  OUT
//   DCL<T>[D|S][(K<k>S<s>P<p>)]@<M>[,<M>...][/<K2>]
// C and FC carry a fused ReLU unless they are the final layer. A DCL token
// without (K..) spans its whole input; without /<K2> it must be the final
// layer and K2 = num_classes. A softmax loss is appended.
NetworkSpec parse_arch(std::string_view text, const Shape& input_shape, std::size_t num_classes);

// One token of the grammar above. `last` and num_classes resolve OUT and a
// DCL token without /<K2>.
LayerSpec parse_layer(std::string_view token, bool last, std::size_t num_classes);

// Re-chains shapes and names after layers were edited. Throws ShapeChainError.
void chain_shapes(NetworkSpec& spec);

std::string render_arch(const NetworkSpec& spec);
std::string render_layer(const LayerSpec& layer);

// Named architectures: lenet, dcl-a2, dcl-a3d, dcl-a3s, dcl-b2, dcl-b3d,
// dcl-b3s (1x28x28 input), their -tiny variants (1x16x16, for gradient
// checks), lenet-cifar (3x32x32) and alexnet (3x227x227, 1000 classes).
struct ArchPreset {
  std::string arch;
  Shape input_shape;
  std::size_t num_classes;
};
ArchPreset arch_preset(std::string_view name, std::size_t num_classes = 100);
std::vector<std::string> arch_preset_names();

}  // namespace dcl
