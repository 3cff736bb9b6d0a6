#include "randla/pointcloud.hpp"

#include <algorithm>
#include <array>
#include <bit>
#include <charconv>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <sstream>
#include <unordered_map>

namespace randla {

namespace fs = std::filesystem;

Matrix PointCloud::features() const {
  Matrix f(size(), feature_dim());
  f.leftCols(3) = coords;
  if (colors) f.rightCols(3) = *colors;
  return f;
}

void PointCloud::validate(std::optional<int> num_classes) const {
  require(size() >= 1, "point cloud is empty");
  require(coords.allFinite(), "point cloud has non-finite coordinates");
  if (colors) {
    require(colors->rows() == size(), "color count does not match point count");
    require(colors->allFinite() && colors->minCoeff() >= 0.0 && colors->maxCoeff() <= 1.0,
            "colors must lie in [0, 1]");
  }
  if (labels) {
    require(static_cast<Index>(labels->size()) == size(), "label count does not match point count");
    for (std::size_t i = 0; i < labels->size(); ++i) {
      const auto label = (*labels)[i];
      require(label >= 0, "negative label at point " + std::to_string(i));
      if (num_classes)
        require(label < *num_classes, "label " + std::to_string(label) + " at point " + std::to_string(i) +
                                          " is not below the class count " + std::to_string(*num_classes));
    }
  }
}

PointCloud PointCloud::subset(std::span<const std::int32_t> indices) const {
  PointCloud out;
  const auto m = static_cast<Index>(indices.size());
  out.coords.resize(m, 3);
  if (colors) out.colors.emplace(m, 3);
  if (labels) out.labels.emplace(indices.size());
  for (Index i = 0; i < m; ++i) {
    const auto src = indices[i];
    out.coords.row(i) = coords.row(src);
    if (colors) out.colors->row(i) = colors->row(src);
    if (labels) (*out.labels)[i] = (*labels)[src];
  }
  return out;
}

std::optional<CloudFormat> parse_cloud_format(std::string_view name) {
  if (name == "ply-ascii") return CloudFormat::PlyAscii;
  if (name == "ply-binary-le" || name == "ply") return CloudFormat::PlyBinaryLE;
  if (name == "xyzrgbl-text" || name == "txt") return CloudFormat::XyzrgblText;
  return std::nullopt;
}

std::string_view to_string(CloudFormat format) {
  switch (format) {
    case CloudFormat::PlyAscii: return "ply-ascii";
    case CloudFormat::PlyBinaryLE: return "ply-binary-le";
    case CloudFormat::XyzrgblText: return "xyzrgbl-text";
  }
  return "unknown";
}

namespace {

bool parse_number(std::string_view token, double& value) {
  const char* first = token.data();
  const char* last = token.data() + token.size();
  if (first != last && *first == '+') ++first;
  auto [ptr, ec] = std::from_chars(first, last, value);
  return ec == std::errc() && ptr == last;
}

std::vector<std::string_view> split_ws(std::string_view line) {
  std::vector<std::string_view> tokens;
  std::size_t i = 0;
  while (i < line.size()) {
    while (i < line.size() && std::isspace(static_cast<unsigned char>(line[i]))) ++i;
    const std::size_t start = i;
    while (i < line.size() && !std::isspace(static_cast<unsigned char>(line[i]))) ++i;
    if (i > start) tokens.push_back(line.substr(start, i - start));
  }
  return tokens;
}

std::int32_t to_label(double value, const std::string& where) {
  if (!(value >= 0) || value != std::floor(value) || value > 2147483647.0)
    throw LoadError(where + ": label must be a non-negative integer");
  return static_cast<std::int32_t>(value);
}

void check_label(std::int32_t label, std::optional<int> num_classes, const std::string& where) {
  if (num_classes && label >= *num_classes)
    throw LoadError(where + ": label " + std::to_string(label) + " is not below the class count " +
                    std::to_string(*num_classes));
}

std::string read_file(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw LoadError("cannot open " + path.string());
  std::ostringstream buffer;
  buffer << in.rdbuf();
  return std::move(buffer).str();
}

struct CloudBuilder {
  std::vector<double> xyz;
  std::vector<double> rgb;
  IndexList labels;
  bool has_colors = false;
  bool has_labels = false;

  PointCloud finish(const std::string& source) {
    PointCloud cloud;
    const Index n = static_cast<Index>(xyz.size() / 3);
    if (n == 0) throw LoadError(source + ": no points");
    cloud.coords = Eigen::Map<const Coords>(xyz.data(), n, 3);
    if (has_colors) cloud.colors = Eigen::Map<const Coords>(rgb.data(), n, 3);
    if (has_labels) cloud.labels = std::move(labels);
    return cloud;
  }
};

PointCloud load_text(const fs::path& path, std::optional<int> num_classes) {
  const std::string text = read_file(path);
  CloudBuilder builder;
  std::size_t columns = 0;
  std::size_t line_no = 0;
  std::size_t pos = 0;
  while (pos < text.size()) {
    std::size_t end = text.find('\n', pos);
    if (end == std::string::npos) end = text.size();
    const std::string_view line(text.data() + pos, end - pos);
    pos = end + 1;
    ++line_no;
    const auto tokens = split_ws(line);
    if (tokens.empty()) continue;
    const std::string where = path.string() + ":" + std::to_string(line_no);
    if (columns == 0) {
      columns = tokens.size();
      if (columns != 3 && columns != 4 && columns != 6 && columns != 7)
        throw LoadError(where + ": expected 3, 4, 6 or 7 columns, found " + std::to_string(columns));
      builder.has_colors = columns >= 6;
      builder.has_labels = columns == 4 || columns == 7;
    } else if (tokens.size() != columns) {
      throw LoadError(where + ": expected " + std::to_string(columns) + " columns, found " +
                      std::to_string(tokens.size()));
    }
    std::array<double, 7> values{};
    for (std::size_t c = 0; c < columns; ++c) {
      if (!parse_number(tokens[c], values[c]))
        throw LoadError(where + ": cannot parse '" + std::string(tokens[c]) + "'");
    }
    for (int c = 0; c < 3; ++c) {
      if (!std::isfinite(values[c])) throw LoadError(where + ": non-finite coordinate");
      builder.xyz.push_back(values[c]);
    }
    if (builder.has_colors) {
      for (int c = 3; c < 6; ++c) {
        if (!(values[c] >= 0 && values[c] <= 255)) throw LoadError(where + ": color outside 0-255");
        builder.rgb.push_back(values[c] / 255.0);
      }
    }
    if (builder.has_labels) {
      const auto label = to_label(values[columns - 1], where);
      check_label(label, num_classes, where);
      builder.labels.push_back(label);
    }
  }
  return builder.finish(path.string());
}

enum class PlyType { Int8, UInt8, Int16, UInt16, Int32, UInt32, Float32, Float64 };

std::optional<PlyType> parse_ply_type(std::string_view name) {
  if (name == "char" || name == "int8") return PlyType::Int8;
  if (name == "uchar" || name == "uint8") return PlyType::UInt8;
  if (name == "short" || name == "int16") return PlyType::Int16;
  if (name == "ushort" || name == "uint16") return PlyType::UInt16;
  if (name == "int" || name == "int32") return PlyType::Int32;
  if (name == "uint" || name == "uint32") return PlyType::UInt32;
  if (name == "float" || name == "float32") return PlyType::Float32;
  if (name == "double" || name == "float64") return PlyType::Float64;
  return std::nullopt;
}

std::size_t type_size(PlyType type) {
  switch (type) {
    case PlyType::Int8:
    case PlyType::UInt8: return 1;
    case PlyType::Int16:
    case PlyType::UInt16: return 2;
    case PlyType::Int32:
    case PlyType::UInt32:
    case PlyType::Float32: return 4;
    case PlyType::Float64: return 8;
  }
  return 0;
}

bool is_integral(PlyType type) { return type != PlyType::Float32 && type != PlyType::Float64; }

template <typename T>
T read_le(const char* p) {
  T value;
  std::memcpy(&value, p, sizeof(T));
  if constexpr (std::endian::native == std::endian::big) {
    auto bytes = std::bit_cast<std::array<unsigned char, sizeof(T)>>(value);
    std::reverse(bytes.begin(), bytes.end());
    value = std::bit_cast<T>(bytes);
  }
  return value;
}

double read_binary(PlyType type, const char* p) {
  switch (type) {
    case PlyType::Int8: return read_le<std::int8_t>(p);
    case PlyType::UInt8: return read_le<std::uint8_t>(p);
    case PlyType::Int16: return read_le<std::int16_t>(p);
    case PlyType::UInt16: return read_le<std::uint16_t>(p);
    case PlyType::Int32: return read_le<std::int32_t>(p);
    case PlyType::UInt32: return read_le<std::uint32_t>(p);
    case PlyType::Float32: return read_le<float>(p);
    case PlyType::Float64: return read_le<double>(p);
  }
  return 0;
}

struct PlyProperty {
  std::string name;
  PlyType type;
  bool is_list = false;
  PlyType count_type = PlyType::UInt8;
};

struct PlyElement {
  std::string name;
  std::size_t count = 0;
  std::vector<PlyProperty> properties;
};

struct PlyHeader {
  bool binary = false;
  std::vector<PlyElement> elements;
  std::size_t data_offset = 0;
  std::size_t data_line = 0;
};

PlyHeader parse_ply_header(const std::string& data, const std::string& source) {
  PlyHeader header;
  std::size_t pos = 0;
  std::size_t line_no = 0;
  bool saw_format = false;
  while (true) {
    const std::size_t end = data.find('\n', pos);
    if (end == std::string::npos) throw LoadError(source + ": PLY header is not terminated by end_header");
    std::string_view line(data.data() + pos, end - pos);
    if (!line.empty() && line.back() == '\r') line.remove_suffix(1);
    pos = end + 1;
    ++line_no;
    const std::string where = source + ":" + std::to_string(line_no);
    const auto tokens = split_ws(line);
    if (line_no == 1) {
      if (tokens.size() != 1 || tokens[0] != "ply") throw LoadError(where + ": missing 'ply' magic");
      continue;
    }
    if (tokens.empty()) continue;
    const auto keyword = tokens[0];
    if (keyword == "comment" || keyword == "obj_info") continue;
    if (keyword == "end_header") break;
    if (keyword == "format") {
      if (tokens.size() != 3) throw LoadError(where + ": malformed format line");
      if (tokens[1] == "ascii") {
        header.binary = false;
      } else if (tokens[1] == "binary_little_endian") {
        header.binary = true;
      } else {
        throw LoadError(where + ": unsupported PLY format '" + std::string(tokens[1]) + "'");
      }
      saw_format = true;
    } else if (keyword == "element") {
      double count = 0;
      if (tokens.size() != 3 || !parse_number(tokens[2], count) || count < 0 || count != std::floor(count))
        throw LoadError(where + ": malformed element line");
      header.elements.push_back({std::string(tokens[1]), static_cast<std::size_t>(count), {}});
    } else if (keyword == "property") {
      if (header.elements.empty()) throw LoadError(where + ": property before any element");
      PlyProperty prop;
      if (tokens.size() == 5 && tokens[1] == "list") {
        const auto count_type = parse_ply_type(tokens[2]);
        const auto item_type = parse_ply_type(tokens[3]);
        if (!count_type || !item_type) throw LoadError(where + ": unknown property type");
        prop = {std::string(tokens[4]), *item_type, true, *count_type};
      } else if (tokens.size() == 3) {
        const auto type = parse_ply_type(tokens[1]);
        if (!type) throw LoadError(where + ": unknown property type '" + std::string(tokens[1]) + "'");
        prop = {std::string(tokens[2]), *type};
      } else {
        throw LoadError(where + ": malformed property line");
      }
      header.elements.back().properties.push_back(prop);
    } else {
      throw LoadError(where + ": unexpected header keyword '" + std::string(keyword) + "'");
    }
  }
  if (!saw_format) throw LoadError(source + ": PLY header has no format line");
  header.data_offset = pos;
  header.data_line = line_no;
  return header;
}

/// Column positions of the properties we understand in the vertex element.
struct VertexLayout {
  std::array<int, 3> xyz{-1, -1, -1};
  std::array<int, 3> rgb{-1, -1, -1};
  int label = -1;
};

VertexLayout vertex_layout(const PlyElement& vertex, const std::string& source) {
  VertexLayout layout;
  for (std::size_t i = 0; i < vertex.properties.size(); ++i) {
    const auto& p = vertex.properties[i];
    const int column = static_cast<int>(i);
    if (p.is_list) continue;
    if (p.name == "x") layout.xyz[0] = column;
    else if (p.name == "y") layout.xyz[1] = column;
    else if (p.name == "z") layout.xyz[2] = column;
    else if (p.name == "red") layout.rgb[0] = column;
    else if (p.name == "green") layout.rgb[1] = column;
    else if (p.name == "blue") layout.rgb[2] = column;
    else if (p.name == "label" || p.name == "class") layout.label = column;
  }
  for (int c : layout.xyz)
    if (c < 0) throw LoadError(source + ": vertex element lacks x, y or z");
  const int colors_found = static_cast<int>(std::count_if(layout.rgb.begin(), layout.rgb.end(), [](int c) { return c >= 0; }));
  if (colors_found != 0 && colors_found != 3) throw LoadError(source + ": vertex element has partial rgb");
  return layout;
}

void append_vertex(CloudBuilder& builder, const PlyElement& vertex, const VertexLayout& layout,
                   const std::vector<double>& values, std::optional<int> num_classes, const std::string& where) {
  for (int c = 0; c < 3; ++c) {
    const double v = values[layout.xyz[c]];
    if (!std::isfinite(v)) throw LoadError(where + ": non-finite coordinate");
    builder.xyz.push_back(v);
  }
  if (builder.has_colors) {
    for (int c = 0; c < 3; ++c) {
      const auto& prop = vertex.properties[layout.rgb[c]];
      double v = values[layout.rgb[c]];
      if (is_integral(prop.type)) v /= 255.0;
      if (!(v >= 0.0 && v <= 1.0)) throw LoadError(where + ": color outside the valid range");
      builder.rgb.push_back(v);
    }
  }
  if (builder.has_labels) {
    const auto label = to_label(values[layout.label], where);
    check_label(label, num_classes, where);
    builder.labels.push_back(label);
  }
}

PointCloud load_ply(const fs::path& path, bool expect_binary, std::optional<int> num_classes) {
  const std::string data = read_file(path);
  const std::string source = path.string();
  const PlyHeader header = parse_ply_header(data, source);
  if (header.binary != expect_binary)
    throw LoadError(source + ": PLY encoding does not match the declared format");

  const auto vertex_it = std::find_if(header.elements.begin(), header.elements.end(),
                                      [](const PlyElement& e) { return e.name == "vertex"; });
  if (vertex_it == header.elements.end()) throw LoadError(source + ": PLY file has no vertex element");
  const VertexLayout layout = vertex_layout(*vertex_it, source);

  CloudBuilder builder;
  builder.has_colors = layout.rgb[0] >= 0;
  builder.has_labels = layout.label >= 0;
  builder.xyz.reserve(vertex_it->count * 3);

  std::vector<double> values;
  if (!header.binary) {
    std::size_t pos = header.data_offset;
    std::size_t line_no = header.data_line;
    for (const auto& element : header.elements) {
      const bool is_vertex = &element == &*vertex_it;
      for (std::size_t r = 0; r < element.count; ++r) {
        std::string_view line;
        std::vector<std::string_view> tokens;
        do {
          if (pos >= data.size())
            throw LoadError(source + ": unexpected end of file in element '" + element.name + "'");
          std::size_t end = data.find('\n', pos);
          if (end == std::string::npos) end = data.size();
          line = std::string_view(data.data() + pos, end - pos);
          pos = end + 1;
          ++line_no;
          tokens = split_ws(line);
        } while (tokens.empty());
        if (!is_vertex) continue;
        const std::string where = source + ":" + std::to_string(line_no);
        values.assign(element.properties.size(), 0.0);
        std::size_t t = 0;
        for (std::size_t p = 0; p < element.properties.size(); ++p) {
          const auto& prop = element.properties[p];
          double v = 0;
          if (t >= tokens.size() || !parse_number(tokens[t], v))
            throw LoadError(where + ": malformed value for property '" + prop.name + "'");
          ++t;
          if (prop.is_list) {
            t += static_cast<std::size_t>(v);
            continue;
          }
          values[p] = v;
        }
        if (t != tokens.size()) throw LoadError(where + ": wrong number of values in vertex record");
        append_vertex(builder, element, layout, values, num_classes, where);
      }
      if (is_vertex) break;
    }
  } else {
    std::size_t pos = header.data_offset;
    for (const auto& element : header.elements) {
      const bool is_vertex = &element == &*vertex_it;
      for (std::size_t r = 0; r < element.count; ++r) {
        const std::string where = source + ": " + element.name + " record " + std::to_string(r);
        values.assign(element.properties.size(), 0.0);
        for (std::size_t p = 0; p < element.properties.size(); ++p) {
          const auto& prop = element.properties[p];
          if (prop.is_list) {
            const std::size_t width = type_size(prop.count_type);
            if (pos + width > data.size()) throw LoadError(where + ": truncated data");
            const double count = read_binary(prop.count_type, data.data() + pos);
            pos += width;
            if (count < 0) throw LoadError(where + ": negative list length");
            const std::size_t bytes = static_cast<std::size_t>(count) * type_size(prop.type);
            if (pos + bytes > data.size()) throw LoadError(where + ": truncated data");
            pos += bytes;
            continue;
          }
          const std::size_t width = type_size(prop.type);
          if (pos + width > data.size()) throw LoadError(where + ": truncated data");
          values[p] = read_binary(prop.type, data.data() + pos);
          pos += width;
        }
        if (is_vertex) append_vertex(builder, element, layout, values, num_classes, where);
      }
      if (is_vertex) break;
    }
  }
  return builder.finish(source);
}

template <typename T>
void write_le(std::string& out, T value) {
  if constexpr (std::endian::native == std::endian::big) {
    auto bytes = std::bit_cast<std::array<char, sizeof(T)>>(value);
    std::reverse(bytes.begin(), bytes.end());
    out.append(bytes.data(), bytes.size());
  } else {
    char bytes[sizeof(T)];
    std::memcpy(bytes, &value, sizeof(T));
    out.append(bytes, sizeof(T));
  }
}

std::uint8_t color_byte(Real c) { return static_cast<std::uint8_t>(std::lround(std::clamp(c, 0.0, 1.0) * 255.0)); }

void write_file(const fs::path& path, const std::string& content) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw std::runtime_error("cannot open " + path.string() + " for writing");
  out.write(content.data(), static_cast<std::streamsize>(content.size()));
  if (!out) throw std::runtime_error("failed writing " + path.string());
}

}  // namespace

CloudFormat detect_cloud_format(const fs::path& path) {
  if (path.extension() == ".ply") {
    std::ifstream in(path);
    if (!in) throw LoadError("cannot open " + path.string());
    std::string line;
    for (int i = 0; i < 64 && std::getline(in, line); ++i) {
      if (line.rfind("format ascii", 0) == 0) return CloudFormat::PlyAscii;
      if (line.rfind("format binary_little_endian", 0) == 0) return CloudFormat::PlyBinaryLE;
      if (line.rfind("end_header", 0) == 0) break;
    }
    throw LoadError(path.string() + ": cannot determine PLY encoding");
  }
  return CloudFormat::XyzrgblText;
}

PointCloud load_cloud(const fs::path& path, CloudFormat format, std::optional<int> num_classes) {
  switch (format) {
    case CloudFormat::PlyAscii: return load_ply(path, false, num_classes);
    case CloudFormat::PlyBinaryLE: return load_ply(path, true, num_classes);
    case CloudFormat::XyzrgblText: return load_text(path, num_classes);
  }
  throw LoadError("unknown cloud format");
}

PointCloud load_cloud(const fs::path& path, std::optional<int> num_classes) {
  return load_cloud(path, detect_cloud_format(path), num_classes);
}

void save_cloud(const fs::path& path, const PointCloud& cloud, CloudFormat format) {
  std::string out;
  const Index n = cloud.size();
  char buffer[160];
  if (format == CloudFormat::XyzrgblText) {
    out.reserve(static_cast<std::size_t>(n) * 48);
    for (Index i = 0; i < n; ++i) {
      int len = std::snprintf(buffer, sizeof buffer, "%.6f %.6f %.6f", cloud.coords(i, 0), cloud.coords(i, 1),
                              cloud.coords(i, 2));
      out.append(buffer, static_cast<std::size_t>(len));
      if (cloud.colors) {
        len = std::snprintf(buffer, sizeof buffer, " %d %d %d", color_byte((*cloud.colors)(i, 0)),
                            color_byte((*cloud.colors)(i, 1)), color_byte((*cloud.colors)(i, 2)));
        out.append(buffer, static_cast<std::size_t>(len));
      }
      if (cloud.labels) out += " " + std::to_string((*cloud.labels)[i]);
      out += '\n';
    }
    write_file(path, out);
    return;
  }

  const bool binary = format == CloudFormat::PlyBinaryLE;
  out += "ply\n";
  out += binary ? "format binary_little_endian 1.0\n" : "format ascii 1.0\n";
  out += "element vertex " + std::to_string(n) + "\n";
  out += "property double x\nproperty double y\nproperty double z\n";
  if (cloud.colors) out += "property uchar red\nproperty uchar green\nproperty uchar blue\n";
  if (cloud.labels) out += "property int label\n";
  out += "end_header\n";
  for (Index i = 0; i < n; ++i) {
    if (binary) {
      for (int c = 0; c < 3; ++c) write_le<double>(out, cloud.coords(i, c));
      if (cloud.colors)
        for (int c = 0; c < 3; ++c) write_le<std::uint8_t>(out, color_byte((*cloud.colors)(i, c)));
      if (cloud.labels) write_le<std::int32_t>(out, (*cloud.labels)[i]);
    } else {
      const int len = std::snprintf(buffer, sizeof buffer, "%.17g %.17g %.17g", cloud.coords(i, 0),
                                    cloud.coords(i, 1), cloud.coords(i, 2));
      out.append(buffer, static_cast<std::size_t>(len));
      if (cloud.colors)
        for (int c = 0; c < 3; ++c) out += " " + std::to_string(color_byte((*cloud.colors)(i, c)));
      if (cloud.labels) out += " " + std::to_string((*cloud.labels)[i]);
      out += '\n';
    }
  }
  write_file(path, out);
}

namespace {

struct VoxelKey {
  std::int64_t x, y, z;
  bool operator==(const VoxelKey&) const = default;
};

struct VoxelKeyHash {
  std::size_t operator()(const VoxelKey& k) const {
    std::uint64_t h = static_cast<std::uint64_t>(k.x) * 0x9e3779b97f4a7c15ULL;
    h ^= static_cast<std::uint64_t>(k.y) * 0xc2b2ae3d27d4eb4fULL + (h << 6) + (h >> 2);
    h ^= static_cast<std::uint64_t>(k.z) * 0x165667b19e3779f9ULL + (h << 6) + (h >> 2);
    return static_cast<std::size_t>(h);
  }
};

}  // namespace

std::pair<PointCloud, SubsampleMap> grid_subsample(const PointCloud& cloud, Real voxel_size) {
  require(voxel_size > 0 && std::isfinite(voxel_size), "grid_subsample: voxel size must be positive");
  const Index n = cloud.size();
  std::unordered_map<VoxelKey, std::int32_t, VoxelKeyHash> voxel_of;
  voxel_of.reserve(static_cast<std::size_t>(n));
  std::vector<std::int32_t> assignment(static_cast<std::size_t>(n));
  std::vector<std::int32_t> counts;
  for (Index i = 0; i < n; ++i) {
    const VoxelKey key{static_cast<std::int64_t>(std::floor(cloud.coords(i, 0) / voxel_size)),
                       static_cast<std::int64_t>(std::floor(cloud.coords(i, 1) / voxel_size)),
                       static_cast<std::int64_t>(std::floor(cloud.coords(i, 2) / voxel_size))};
    const auto [it, inserted] = voxel_of.try_emplace(key, static_cast<std::int32_t>(counts.size()));
    if (inserted) counts.push_back(0);
    assignment[i] = it->second;
    ++counts[it->second];
  }

  SubsampleMap map;
  map.voxel_size = voxel_size;
  const auto m = static_cast<Index>(counts.size());
  map.offsets.assign(static_cast<std::size_t>(m) + 1, 0);
  for (Index v = 0; v < m; ++v) map.offsets[v + 1] = map.offsets[v] + counts[v];
  map.members.resize(static_cast<std::size_t>(n));
  std::vector<std::int32_t> cursor(map.offsets.begin(), map.offsets.end() - 1);
  for (Index i = 0; i < n; ++i) map.members[cursor[assignment[i]]++] = static_cast<std::int32_t>(i);

  PointCloud out;
  out.coords.resize(m, 3);
  if (cloud.colors) out.colors.emplace(m, 3);
  if (cloud.labels) out.labels.emplace(static_cast<std::size_t>(m));
  std::vector<std::int32_t> member_labels;
  for (Index v = 0; v < m; ++v) {
    const auto members = map.members_of(v);
    Eigen::RowVector3d sum = Eigen::RowVector3d::Zero();
    Eigen::RowVector3d color_sum = Eigen::RowVector3d::Zero();
    for (auto i : members) {
      sum += cloud.coords.row(i);
      if (cloud.colors) color_sum += cloud.colors->row(i);
    }
    const auto count = static_cast<Real>(members.size());
    out.coords.row(v) = sum / count;
    if (cloud.colors) out.colors->row(v) = color_sum / count;
    if (cloud.labels) {
      member_labels.clear();
      for (auto i : members) member_labels.push_back((*cloud.labels)[i]);
      std::sort(member_labels.begin(), member_labels.end());
      std::int32_t best = member_labels.front();
      std::size_t best_run = 0;
      for (std::size_t a = 0; a < member_labels.size();) {
        std::size_t b = a;
        while (b < member_labels.size() && member_labels[b] == member_labels[a]) ++b;
        if (b - a > best_run) {
          best_run = b - a;
          best = member_labels[a];
        }
        a = b;
      }
      (*out.labels)[v] = best;
    }
  }
  return {std::move(out), std::move(map)};
}

IndexList crop_subcloud(const PointCloud& cloud, std::int32_t center_index, Index count, const SpatialIndex& index) {
  require(index.size() == cloud.size(), "crop_subcloud: index was built over a different cloud");
  require(center_index >= 0 && center_index < cloud.size(), "crop_subcloud: center index out of range");
  require(count >= 1, "crop_subcloud: count must be at least 1");
  require(count <= cloud.size(), "crop_subcloud: count " + std::to_string(count) + " exceeds the cloud size " +
                                     std::to_string(cloud.size()));
  std::vector<Neighbor<Real>> row;
  const Eigen::RowVector3d center = cloud.coords.row(center_index);
  index.knn(center.data(), static_cast<int>(count), row);
  IndexList result;
  result.reserve(row.size());
  // The center sits at distance zero; a coincident point with a smaller
  // index could push it out of the tie-broken order, so pin it first.
  result.push_back(center_index);
  for (const auto& nb : row)
    if (nb.index != center_index && static_cast<Index>(result.size()) < count) result.push_back(nb.index);
  return result;
}

void save_labels(const fs::path& path, std::span<const std::int32_t> labels) {
  std::string out;
  out.reserve(labels.size() * 3);
  for (auto label : labels) {
    out += std::to_string(label);
    out += '\n';
  }
  write_file(path, out);
}

IndexList load_labels(const fs::path& path, std::optional<int> num_classes) {
  const std::string text = read_file(path);
  IndexList labels;
  std::size_t pos = 0;
  std::size_t line_no = 0;
  while (pos < text.size()) {
    std::size_t end = text.find('\n', pos);
    if (end == std::string::npos) end = text.size();
    const auto tokens = split_ws(std::string_view(text.data() + pos, end - pos));
    pos = end + 1;
    ++line_no;
    if (tokens.empty()) continue;
    const std::string where = path.string() + ":" + std::to_string(line_no);
    if (tokens.size() != 1) throw LoadError(where + ": expected one label per line");
    std::int64_t value = 0;
    const auto token = tokens[0];
    auto [ptr, ec] = std::from_chars(token.data(), token.data() + token.size(), value);
    if (ec != std::errc() || ptr != token.data() + token.size())
      throw LoadError(where + ": cannot parse label '" + std::string(token) + "'");
    if (value < 0 || value > std::numeric_limits<std::int32_t>::max())
      throw LoadError(where + ": label out of range");
    const auto label = static_cast<std::int32_t>(value);
    check_label(label, num_classes, where);
    labels.push_back(label);
  }
  return labels;
}

}  // namespace randla
