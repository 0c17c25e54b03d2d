#include <permutofilt/pipelines.hpp>

#include <png.h>

#include <cctype>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>

namespace permutofilt {

namespace {

std::string lower_extension(const std::string& path) {
  const auto dot = path.find_last_of('.');
  if (dot == std::string::npos) return "";
  std::string ext = path.substr(dot + 1);
  for (char& c : ext) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
  return ext;
}

int next_pnm_token(std::istream& in) {
  // Skips whitespace and '#' comments, then reads one non-negative integer.
  for (;;) {
    const int c = in.peek();
    if (c == EOF) throw IoError("truncated image header");
    if (c == '#') {
      std::string comment;
      std::getline(in, comment);
      continue;
    }
    if (std::isspace(c)) {
      in.get();
      continue;
    }
    break;
  }
  int value = 0;
  if (!(in >> value) || value < 0) throw IoError("bad integer in image header");
  return value;
}

struct PnmHeader {
  int kind = 0;  // 2, 3, 5, 6
  int width = 0;
  int height = 0;
  int maxval = 0;
};

PnmHeader read_pnm_header(std::istream& in) {
  char p = 0, k = 0;
  in.get(p);
  in.get(k);
  if (!in || p != 'P' || (k != '2' && k != '3' && k != '5' && k != '6'))
    throw IoError("not an ASCII or binary PPM/PGM file");
  PnmHeader header;
  header.kind = k - '0';
  header.width = next_pnm_token(in);
  header.height = next_pnm_token(in);
  header.maxval = next_pnm_token(in);
  if (header.width < 1 || header.height < 1 || header.maxval < 1 || header.maxval > 65535)
    throw IoError("image header out of range");
  return header;
}

}  // namespace

ImageBuffer read_pnm(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open image: " + path);
  const PnmHeader header = read_pnm_header(in);
  const bool color = header.kind == 3 || header.kind == 6;
  const bool binary = header.kind == 5 || header.kind == 6;

  ImageBuffer image;
  image.width = header.width;
  image.height = header.height;
  image.channels = color ? 3 : 1;
  image.values.resize(image.pixel_count(), image.channels);

  const Index samples = image.pixel_count() * image.channels;
  const double scale = 1.0 / header.maxval;
  if (binary) {
    if (header.maxval > 255) throw IoError("binary image depth above 8 bits: " + path);
    in.get();  // single whitespace after maxval
    std::vector<unsigned char> data(static_cast<std::size_t>(samples));
    in.read(reinterpret_cast<char*>(data.data()), samples);
    if (!in) throw IoError("image data truncated: " + path);
    for (Index i = 0; i < samples; ++i)
      image.values(i / image.channels, i % image.channels) = data[i] * scale;
  } else {
    for (Index i = 0; i < samples; ++i) {
      const int v = next_pnm_token(in);
      if (v > header.maxval) throw IoError("sample exceeds the declared maximum: " + path);
      image.values(i / image.channels, i % image.channels) = v * scale;
    }
  }
  return image;
}

void write_pnm(const std::string& path, const ImageBuffer& image) {
  if (image.channels != 1 && image.channels != 3)
    throw ShapeMismatch("images must have 1 or 3 channels");
  std::ofstream out(path);
  if (!out) throw IoError("cannot open image for writing: " + path);
  out << (image.channels == 3 ? "P3" : "P2") << "\n"
      << image.width << " " << image.height << "\n255\n";
  int on_line = 0;
  for (Index i = 0; i < image.pixel_count(); ++i)
    for (int c = 0; c < image.channels; ++c) {
      const double v = std::clamp(image.values(i, c), 0.0, 1.0);
      out << static_cast<int>(std::lround(v * 255.0));
      if (++on_line == 12) {
        out << "\n";
        on_line = 0;
      } else {
        out << " ";
      }
    }
  out << "\n";
  if (!out) throw IoError("failed writing image: " + path);
}

ImageBuffer read_png(const std::string& path) {
  std::FILE* fp = std::fopen(path.c_str(), "rb");
  if (!fp) throw IoError("cannot open image: " + path);

  png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  png_infop info = png ? png_create_info_struct(png) : nullptr;
  std::vector<png_bytep> row_pointers;
  std::vector<unsigned char> data;
  bool failed = false;

  if (!png || !info || setjmp(png_jmpbuf(png))) {
    failed = true;
  } else {
    png_init_io(png, fp);
    png_read_info(png, info);
    png_set_strip_16(png);
    png_set_palette_to_rgb(png);
    png_set_expand_gray_1_2_4_to_8(png);
    if (png_get_valid(png, info, PNG_INFO_tRNS)) png_set_tRNS_to_alpha(png);
    png_set_strip_alpha(png);
    png_read_update_info(png, info);

    const png_uint_32 width = png_get_image_width(png, info);
    const png_uint_32 height = png_get_image_height(png, info);
    const int channels = png_get_channels(png, info);
    if (channels != 1 && channels != 3) {
      failed = true;
    } else {
      const std::size_t stride = png_get_rowbytes(png, info);
      data.resize(stride * height);
      row_pointers.resize(height);
      for (png_uint_32 y = 0; y < height; ++y) row_pointers[y] = data.data() + y * stride;
      png_read_image(png, row_pointers.data());
      png_read_end(png, nullptr);
      png_destroy_read_struct(&png, &info, nullptr);
      std::fclose(fp);

      ImageBuffer image;
      image.width = static_cast<int>(width);
      image.height = static_cast<int>(height);
      image.channels = channels;
      image.values.resize(image.pixel_count(), channels);
      for (Index i = 0; i < image.pixel_count(); ++i)
        for (int c = 0; c < channels; ++c)
          image.values(i, c) = data[static_cast<std::size_t>(i) * channels + c] / 255.0;
      return image;
    }
  }

  if (png) png_destroy_read_struct(&png, info ? &info : nullptr, nullptr);
  std::fclose(fp);
  (void)failed;
  throw IoError("failed decoding png: " + path);
}

void write_png(const std::string& path, const ImageBuffer& image) {
  if (image.channels != 1 && image.channels != 3)
    throw ShapeMismatch("images must have 1 or 3 channels");

  std::vector<unsigned char> data(static_cast<std::size_t>(image.pixel_count()) * image.channels);
  for (Index i = 0; i < image.pixel_count(); ++i)
    for (int c = 0; c < image.channels; ++c) {
      const double v = std::clamp(image.values(i, c), 0.0, 1.0);
      data[static_cast<std::size_t>(i) * image.channels + c] =
          static_cast<unsigned char>(std::lround(v * 255.0));
    }
  std::vector<png_bytep> row_pointers(image.height);
  const std::size_t stride = static_cast<std::size_t>(image.width) * image.channels;
  for (int y = 0; y < image.height; ++y) row_pointers[y] = data.data() + y * stride;

  std::FILE* fp = std::fopen(path.c_str(), "wb");
  if (!fp) throw IoError("cannot open image for writing: " + path);
  png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  png_infop info = png ? png_create_info_struct(png) : nullptr;
  if (!png || !info || setjmp(png_jmpbuf(png))) {
    if (png) png_destroy_write_struct(&png, info ? &info : nullptr);
    std::fclose(fp);
    throw IoError("failed encoding png: " + path);
  }
  png_init_io(png, fp);
  png_set_IHDR(png, info, image.width, image.height, 8,
               image.channels == 3 ? PNG_COLOR_TYPE_RGB : PNG_COLOR_TYPE_GRAY,
               PNG_INTERLACE_NONE, PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
  png_write_info(png, info);
  png_write_image(png, row_pointers.data());
  png_write_end(png, nullptr);
  png_destroy_write_struct(&png, &info);
  std::fclose(fp);
}

ImageBuffer read_image(const std::string& path) {
  const std::string ext = lower_extension(path);
  if (ext == "png") return read_png(path);
  if (ext == "ppm" || ext == "pgm" || ext == "pnm") return read_pnm(path);
  throw IoError("unsupported image format: " + path);
}

void write_image(const std::string& path, const ImageBuffer& image) {
  const std::string ext = lower_extension(path);
  if (ext == "png") {
    write_png(path, image);
  } else if (ext == "ppm" || ext == "pgm" || ext == "pnm") {
    write_pnm(path, image);
  } else {
    throw IoError("unsupported image format: " + path);
  }
}

namespace {

std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> fields;
  std::stringstream stream(line);
  std::string field;
  while (std::getline(stream, field, ',')) {
    const auto begin = field.find_first_not_of(" \t\r");
    if (begin == std::string::npos) {
      fields.push_back("");
    } else {
      const auto end = field.find_last_not_of(" \t\r");
      fields.push_back(field.substr(begin, end - begin + 1));
    }
  }
  if (!line.empty() && line.back() == ',') fields.push_back("");
  return fields;
}

double parse_csv_double(const std::string& text, const std::string& path) {
  try {
    std::size_t used = 0;
    const double v = std::stod(text, &used);
    if (used != text.size()) throw std::invalid_argument(text);
    return v;
  } catch (const std::exception&) {
    throw IoError("bad numeric field '" + text + "' in " + path);
  }
}

}  // namespace

Signal read_point_cloud_csv(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open point cloud: " + path);
  std::string line;
  if (!std::getline(in, line)) throw IoError("point cloud file is empty: " + path);

  const std::vector<std::string> header = split_csv_line(line);
  int value_count = 0;
  int feature_count = 0;
  for (const std::string& name : header) {
    if (name == "value_" + std::to_string(value_count) && feature_count == 0) {
      ++value_count;
    } else if (name == "feat_" + std::to_string(feature_count)) {
      ++feature_count;
    } else {
      throw IoError("unexpected point cloud column '" + name + "' in " + path);
    }
  }
  if (value_count == 0 || feature_count == 0)
    throw IoError("point cloud needs value_* and feat_* columns: " + path);

  std::vector<double> flat;
  Index rows = 0;
  while (std::getline(in, line)) {
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    const std::vector<std::string> fields = split_csv_line(line);
    if (static_cast<int>(fields.size()) != value_count + feature_count)
      throw IoError("point cloud row has wrong field count: " + path);
    for (const std::string& field : fields) flat.push_back(parse_csv_double(field, path));
    ++rows;
  }
  if (rows == 0) throw EmptyInput("point cloud has no rows: " + path);

  Signal signal;
  signal.values.resize(rows, value_count);
  signal.features.resize(rows, feature_count);
  for (Index i = 0; i < rows; ++i) {
    const std::size_t base = static_cast<std::size_t>(i) * (value_count + feature_count);
    for (int c = 0; c < value_count; ++c) signal.values(i, c) = flat[base + c];
    for (int d = 0; d < feature_count; ++d)
      signal.features(i, d) = flat[base + value_count + d];
  }
  return signal;
}

void write_point_cloud_csv(const std::string& path, const Signal& signal) {
  if (signal.values.rows() != signal.features.rows())
    throw ShapeMismatch("signal values and features disagree on point count");
  std::ofstream out(path);
  if (!out) throw IoError("cannot open point cloud for writing: " + path);
  out.precision(17);
  for (Index c = 0; c < signal.values.cols(); ++c) out << (c ? "," : "") << "value_" << c;
  for (Index d = 0; d < signal.features.cols(); ++d) out << ",feat_" << d;
  out << "\n";
  for (Index i = 0; i < signal.values.rows(); ++i) {
    for (Index c = 0; c < signal.values.cols(); ++c)
      out << (c ? "," : "") << signal.values(i, c);
    for (Index d = 0; d < signal.features.cols(); ++d) out << "," << signal.features(i, d);
    out << "\n";
  }
  if (!out) throw IoError("failed writing point cloud: " + path);
}

std::vector<int> read_segments(const std::string& path) {
  const std::string ext = lower_extension(path);
  std::vector<int> segments;
  if (ext == "pgm" || ext == "pnm") {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open segment map: " + path);
    const PnmHeader header = read_pnm_header(in);
    if (header.kind != 2 && header.kind != 5)
      throw IoError("segment rasters must be graymaps: " + path);
    const Index samples = static_cast<Index>(header.width) * header.height;
    segments.reserve(samples);
    if (header.kind == 5) {
      if (header.maxval > 255) throw IoError("binary segment raster above 8 bits: " + path);
      in.get();
      for (Index i = 0; i < samples; ++i) {
        const int v = in.get();
        if (v == EOF) throw IoError("segment raster truncated: " + path);
        segments.push_back(v);
      }
    } else {
      for (Index i = 0; i < samples; ++i) segments.push_back(next_pnm_token(in));
    }
    return segments;
  }

  std::ifstream in(path);
  if (!in) throw IoError("cannot open segment file: " + path);
  std::string line;
  bool first = true;
  while (std::getline(in, line)) {
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    const std::vector<std::string> fields = split_csv_line(line);
    const std::string& text = fields.back();
    if (first && !text.empty() &&
        text.find_first_not_of("0123456789-") != std::string::npos) {
      first = false;  // header line
      continue;
    }
    first = false;
    segments.push_back(static_cast<int>(parse_csv_double(text, path)));
  }
  if (segments.empty()) throw EmptyInput("segment file has no entries: " + path);
  return segments;
}

}  // namespace permutofilt
