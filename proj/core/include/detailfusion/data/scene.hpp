#pragma once

#include <array>
#include <cstdint>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

namespace dfusion {

enum class Shape : std::uint8_t { kCircle, kSquare, kTriangle };
enum class Color : std::uint8_t { kRed, kGreen, kBlue, kYellow, kCyan, kMagenta, kWhite, kBlack };

inline constexpr int kNumShapes = 3;
inline constexpr int kNumColors = 8;
inline constexpr int kMaxGridSize = 8;

std::string_view to_string(Shape s);
std::string_view to_string(Color c);
Shape parse_shape(std::string_view s);
Color parse_color(std::string_view s);
std::array<float, 3> rgb(Color c);

struct Cell {
  int row = 0;
  int col = 0;
  friend bool operator==(const Cell&, const Cell&) = default;
  friend auto operator<=>(const Cell&, const Cell&) = default;
};

struct SceneObject {
  Shape shape = Shape::kCircle;
  Color color = Color::kRed;
  Cell cell;
  friend bool operator==(const SceneObject&, const SceneObject&) = default;
};

// Objects are kept sorted by cell (row-major) so that equal scenes compare
// equal regardless of how they were built.
struct SceneDescription {
  int grid_size = 4;
  Color background = Color::kBlack;
  std::vector<SceneObject> objects;

  const SceneObject* find(Cell cell) const;
  bool occupied(Cell cell) const { return find(cell) != nullptr; }
  void canonicalize();
  // Stable textual key, used for gallery de-duplication.
  std::string key() const;

  friend bool operator==(const SceneDescription&, const SceneDescription&) = default;
};

// Throws ValidationError naming the violated invariant. An empty object list
// is accepted here (it renders as plain background); generators never emit one.
void validate_scene(const SceneDescription& scene);

// H x W x 3 image, row-major HWC, values in [0, 1].
struct Image {
  int height = 0;
  int width = 0;
  std::vector<float> pixels;

  static constexpr int kChannels = 3;
  float at(int y, int x, int c) const { return pixels[(static_cast<std::size_t>(y) * width + x) * kChannels + c]; }
  friend bool operator==(const Image&, const Image&) = default;
};

Image render_scene(const SceneDescription& scene, int resolution);

enum class EditVerb : std::uint8_t { kAdd, kRemove, kRecolor, kMove };
std::string_view to_string(EditVerb v);

// One single-step transformation. `shape` names the object being edited (for
// add: the object created); `color` is the new color for add/recolor; `to` is
// the destination cell for move.
struct AtomicEdit {
  EditVerb verb = EditVerb::kAdd;
  Shape shape = Shape::kCircle;
  Color color = Color::kRed;
  Cell cell;
  Cell to;

  static AtomicEdit add(Shape s, Color c, Cell at) { return {EditVerb::kAdd, s, c, at, {}}; }
  static AtomicEdit remove(Shape s, Cell at) { return {EditVerb::kRemove, s, Color::kRed, at, {}}; }
  static AtomicEdit recolor(Shape s, Cell at, Color c) { return {EditVerb::kRecolor, s, c, at, {}}; }
  static AtomicEdit move(Shape s, Cell from, Cell dest) { return {EditVerb::kMove, s, Color::kRed, from, dest}; }

  friend bool operator==(const AtomicEdit&, const AtomicEdit&) = default;
};

// Applies one edit; throws EditError when the operands do not match the scene.
SceneDescription apply_edit(const SceneDescription& scene, const AtomicEdit& edit);
SceneDescription apply_edits(SceneDescription scene, const std::vector<AtomicEdit>& edits);

// Templated phrase, e.g. {"recolor", "square", "r1", "c1", "blue"}.
std::vector<std::string> edit_phrase(const AtomicEdit& edit);
// Phrases joined with "and".
std::vector<std::string> edits_phrase(const std::vector<AtomicEdit>& edits);

}  // namespace dfusion
