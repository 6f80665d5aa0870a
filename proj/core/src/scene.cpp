#include "detailfusion/data/scene.hpp"

#include <algorithm>
#include <cmath>

#include "detailfusion/common/errors.hpp"

namespace dfusion {
namespace {

constexpr std::array<std::string_view, kNumShapes> kShapeNames = {"circle", "square", "triangle"};
constexpr std::array<std::string_view, kNumColors> kColorNames = {"red",  "green", "blue",  "yellow",
                                                                  "cyan", "magenta", "white", "black"};
constexpr std::array<std::array<float, 3>, kNumColors> kPalette = {{
    {0.90f, 0.10f, 0.10f},
    {0.10f, 0.75f, 0.20f},
    {0.15f, 0.25f, 0.90f},
    {0.95f, 0.90f, 0.10f},
    {0.10f, 0.85f, 0.90f},
    {0.85f, 0.15f, 0.85f},
    {1.00f, 1.00f, 1.00f},
    {0.05f, 0.05f, 0.05f},
}};

bool in_bounds(Cell c, int grid) { return c.row >= 0 && c.col >= 0 && c.row < grid && c.col < grid; }

std::string cell_name(char prefix, int v) { return std::string(1, prefix) + std::to_string(v); }

// Coverage test for a pixel at local coordinates (y, x) in a cell of side n.
bool covers(Shape shape, int y, int x, int n) {
  const int margin = std::max(1, n / 8);
  const double lo = margin;
  const double hi = n - margin;  // exclusive
  if (y < lo || y >= hi || x < lo || x >= hi) return false;
  const double cy = (n - 1) / 2.0;
  const double cx = (n - 1) / 2.0;
  switch (shape) {
    case Shape::kSquare:
      return true;
    case Shape::kCircle: {
      const double r = (hi - lo) / 2.0;
      const double dy = y - cy;
      const double dx = x - cx;
      return dy * dy + dx * dx <= r * r;
    }
    case Shape::kTriangle: {
      // Apex at the top, base along the bottom row.
      const double height = hi - lo;
      const double half_base = (hi - lo) / 2.0;
      const double t = (y - lo + 1.0) / height;
      return std::abs(x - cx) <= half_base * t;
    }
  }
  return false;
}

}  // namespace

std::string_view to_string(Shape s) { return kShapeNames.at(static_cast<std::size_t>(s)); }
std::string_view to_string(Color c) { return kColorNames.at(static_cast<std::size_t>(c)); }

std::string_view to_string(EditVerb v) {
  switch (v) {
    case EditVerb::kAdd: return "add";
    case EditVerb::kRemove: return "remove";
    case EditVerb::kRecolor: return "recolor";
    case EditVerb::kMove: return "move";
  }
  return "?";
}

Shape parse_shape(std::string_view s) {
  for (std::size_t i = 0; i < kShapeNames.size(); ++i)
    if (kShapeNames[i] == s) return static_cast<Shape>(i);
  throw ValidationError("unknown shape '" + std::string(s) + "'");
}

Color parse_color(std::string_view s) {
  for (std::size_t i = 0; i < kColorNames.size(); ++i)
    if (kColorNames[i] == s) return static_cast<Color>(i);
  throw ValidationError("unknown color '" + std::string(s) + "'");
}

std::array<float, 3> rgb(Color c) { return kPalette.at(static_cast<std::size_t>(c)); }

const SceneObject* SceneDescription::find(Cell cell) const {
  for (const auto& o : objects)
    if (o.cell == cell) return &o;
  return nullptr;
}

void SceneDescription::canonicalize() {
  std::sort(objects.begin(), objects.end(),
            [](const SceneObject& a, const SceneObject& b) { return a.cell < b.cell; });
}

std::string SceneDescription::key() const {
  std::string k = "g" + std::to_string(grid_size) + "b" + std::to_string(static_cast<int>(background));
  for (const auto& o : objects) {
    k += ';';
    k += std::to_string(o.cell.row) + ',' + std::to_string(o.cell.col) + ',' +
         std::to_string(static_cast<int>(o.shape)) + ',' + std::to_string(static_cast<int>(o.color));
  }
  return k;
}

void validate_scene(const SceneDescription& scene) {
  if (scene.grid_size < 1 || scene.grid_size > kMaxGridSize)
    throw ValidationError("grid_size must be in [1, " + std::to_string(kMaxGridSize) + "]");
  if (static_cast<int>(scene.background) >= kNumColors) throw ValidationError("background color outside palette");
  const auto capacity = static_cast<std::size_t>(scene.grid_size * scene.grid_size);
  if (scene.objects.size() > capacity) throw ValidationError("object count exceeds grid_size^2");
  std::vector<Cell> seen;
  for (const auto& o : scene.objects) {
    if (!in_bounds(o.cell, scene.grid_size)) throw ValidationError("object cell outside grid bounds");
    if (static_cast<int>(o.shape) >= kNumShapes) throw ValidationError("object shape outside shape set");
    if (static_cast<int>(o.color) >= kNumColors) throw ValidationError("object color outside palette");
    if (o.color == scene.background) throw ValidationError("object color equals background color");
    if (std::find(seen.begin(), seen.end(), o.cell) != seen.end())
      throw ValidationError("more than one object in a cell");
    seen.push_back(o.cell);
  }
}

Image render_scene(const SceneDescription& scene, int resolution) {
  validate_scene(scene);
  if (resolution <= 0 || resolution % scene.grid_size != 0)
    throw ValidationError("resolution must be a positive multiple of grid_size");
  const int n = resolution / scene.grid_size;

  Image img;
  img.height = resolution;
  img.width = resolution;
  img.pixels.resize(static_cast<std::size_t>(resolution) * resolution * Image::kChannels);
  const auto bg = rgb(scene.background);
  for (std::size_t p = 0; p < img.pixels.size(); p += Image::kChannels) {
    img.pixels[p + 0] = bg[0];
    img.pixels[p + 1] = bg[1];
    img.pixels[p + 2] = bg[2];
  }
  for (const auto& o : scene.objects) {
    const auto fg = rgb(o.color);
    for (int y = 0; y < n; ++y) {
      for (int x = 0; x < n; ++x) {
        if (!covers(o.shape, y, x, n)) continue;
        const int py = o.cell.row * n + y;
        const int px = o.cell.col * n + x;
        const std::size_t base = (static_cast<std::size_t>(py) * resolution + px) * Image::kChannels;
        img.pixels[base + 0] = fg[0];
        img.pixels[base + 1] = fg[1];
        img.pixels[base + 2] = fg[2];
      }
    }
  }
  return img;
}

SceneDescription apply_edit(const SceneDescription& scene, const AtomicEdit& edit) {
  SceneDescription out = scene;
  const int grid = scene.grid_size;
  auto locate = [&](Cell cell) -> SceneObject& {
    if (!in_bounds(cell, grid)) throw EditError("cell outside grid");
    for (auto& o : out.objects) {
      if (o.cell == cell) {
        if (o.shape != edit.shape)
          throw EditError("object at r" + std::to_string(cell.row) + " c" + std::to_string(cell.col) + " is a " +
                          std::string(to_string(o.shape)) + ", not a " + std::string(to_string(edit.shape)));
        return o;
      }
    }
    throw EditError("no object at r" + std::to_string(cell.row) + " c" + std::to_string(cell.col));
  };

  switch (edit.verb) {
    case EditVerb::kAdd:
      if (!in_bounds(edit.cell, grid)) throw EditError("add target cell outside grid");
      if (scene.occupied(edit.cell)) throw EditError("add target cell already occupied");
      if (edit.color == scene.background) throw EditError("added object would match the background");
      out.objects.push_back({edit.shape, edit.color, edit.cell});
      break;
    case EditVerb::kRemove: {
      locate(edit.cell);
      std::erase_if(out.objects, [&](const SceneObject& o) { return o.cell == edit.cell; });
      break;
    }
    case EditVerb::kRecolor: {
      auto& o = locate(edit.cell);
      if (o.color == edit.color) throw EditError("recolor to the object's current color");
      if (edit.color == scene.background) throw EditError("recolor would match the background");
      o.color = edit.color;
      break;
    }
    case EditVerb::kMove: {
      auto& o = locate(edit.cell);
      if (!in_bounds(edit.to, grid)) throw EditError("move destination outside grid");
      if (scene.occupied(edit.to)) throw EditError("move destination already occupied");
      o.cell = edit.to;
      break;
    }
  }
  out.canonicalize();
  return out;
}

SceneDescription apply_edits(SceneDescription scene, const std::vector<AtomicEdit>& edits) {
  for (const auto& e : edits) scene = apply_edit(scene, e);
  return scene;
}

std::vector<std::string> edit_phrase(const AtomicEdit& e) {
  const std::string shape(to_string(e.shape));
  const std::string row = cell_name('r', e.cell.row);
  const std::string col = cell_name('c', e.cell.col);
  switch (e.verb) {
    case EditVerb::kAdd:
      return {"add", std::string(to_string(e.color)), shape, row, col};
    case EditVerb::kRemove:
      return {"remove", shape, row, col};
    case EditVerb::kRecolor:
      return {"recolor", shape, row, col, std::string(to_string(e.color))};
    case EditVerb::kMove:
      return {"move", shape, row, col, "to", cell_name('r', e.to.row), cell_name('c', e.to.col)};
  }
  return {};
}

std::vector<std::string> edits_phrase(const std::vector<AtomicEdit>& edits) {
  std::vector<std::string> words;
  for (std::size_t i = 0; i < edits.size(); ++i) {
    if (i > 0) words.emplace_back("and");
    auto p = edit_phrase(edits[i]);
    words.insert(words.end(), p.begin(), p.end());
  }
  return words;
}

}  // namespace dfusion
