// SPDX-License-Identifier: Apache-2.0
#include "tiue/io.hpp"

#include <algorithm>
#include <bit>
#include <cstring>
#include <fstream>
#include <set>

#include "tiue/config.hpp"
#include "tiue/sampler.hpp"

namespace tiue {

using nlohmann::json;

static_assert(std::endian::native == std::endian::little, "checkpoint I/O assumes a little-endian host");

namespace {

constexpr char kMagic[4] = {'T', 'I', 'U', 'E'};
constexpr std::size_t kPreamble = 16;

template <class U>
void put(std::vector<std::uint8_t>& out, U v) {
  const auto* p = reinterpret_cast<const std::uint8_t*>(&v);
  out.insert(out.end(), p, p + sizeof(U));
}

template <class U>
U take(const std::vector<std::uint8_t>& in, std::size_t at) {
  U v;
  std::memcpy(&v, in.data() + at, sizeof(U));
  return v;
}

}  // namespace

std::vector<std::uint8_t> serialize_checkpoint(const ParamStore<float>& tensors, const CheckpointMeta& meta) {
  json table = json::array();
  std::uint64_t offset = 0;
  for (const auto& e : tensors.entries()) {
    const std::uint64_t len = static_cast<std::uint64_t>(e.value.numel()) * sizeof(float);
    table.push_back({{"name", e.name}, {"dtype", "f32"}, {"shape", e.value.shape()}, {"byte_offset", offset}, {"byte_len", len}});
    offset += len;
  }
  json header{{"model_config", to_json(meta.model)},
              {"schedule_params", to_json(meta.schedule)},
              {"tensors", table},
              {"training_meta",
               {{"iterations", meta.iterations},
                {"config_hash", meta.config_hash},
                {"ema", meta.ema},
                {"kind", meta.kind},
                {"lora_rank", meta.lora_rank},
                {"lora_alpha", meta.lora_alpha}}}};
  if (meta.plan) header["sampler_plan"] = to_json(*meta.plan);
  const auto text = header.dump();

  std::vector<std::uint8_t> out;
  out.reserve(kPreamble + text.size() + offset);
  out.insert(out.end(), kMagic, kMagic + 4);
  put<std::uint32_t>(out, kCheckpointVersion);
  put<std::uint64_t>(out, text.size());
  out.insert(out.end(), text.begin(), text.end());
  for (const auto& e : tensors.entries()) {
    const auto* p = reinterpret_cast<const std::uint8_t*>(e.value.data());
    out.insert(out.end(), p, p + e.value.numel() * static_cast<std::int64_t>(sizeof(float)));
  }
  return out;
}

Checkpoint parse_checkpoint(const std::vector<std::uint8_t>& bytes) {
  if (bytes.size() < kPreamble) fail(ErrorCode::Corrupt, "file shorter than the checkpoint preamble");
  if (std::memcmp(bytes.data(), kMagic, 4) != 0) fail(ErrorCode::Corrupt, "bad magic");
  const auto version = take<std::uint32_t>(bytes, 4);
  if (version != kCheckpointVersion) fail(ErrorCode::VersionUnsupported, "checkpoint version " + std::to_string(version) + " is not supported");
  const auto header_len = take<std::uint64_t>(bytes, 8);
  if (header_len > bytes.size() - kPreamble) fail(ErrorCode::Corrupt, "header length exceeds file size");

  json header;
  try {
    header = json::parse(bytes.begin() + kPreamble, bytes.begin() + static_cast<std::ptrdiff_t>(kPreamble + header_len));
  } catch (const json::exception& e) {
    fail(ErrorCode::Corrupt, std::string("header is not valid JSON: ") + e.what());
  }

  Checkpoint ck;
  struct Row {
    std::string name;
    Shape shape;
    std::uint64_t offset, len;
  };
  std::vector<Row> rows;
  try {
    ck.meta.model = unet_config_from_json(header.at("model_config"));
    ck.meta.schedule = schedule_params_from_json(header.at("schedule_params"));
    if (header.contains("sampler_plan")) ck.meta.plan = sampler_plan_from_json(header.at("sampler_plan"));
    const auto& tm = header.at("training_meta");
    ck.meta.iterations = tm.at("iterations").get<std::int64_t>();
    ck.meta.config_hash = tm.at("config_hash").get<std::string>();
    ck.meta.ema = tm.at("ema").get<bool>();
    ck.meta.kind = tm.value("kind", std::string{});
    ck.meta.lora_rank = tm.value("lora_rank", 0);
    ck.meta.lora_alpha = tm.value("lora_alpha", 0.0);
    for (const auto& t : header.at("tensors")) {
      if (t.at("dtype").get<std::string>() != "f32") fail(ErrorCode::Corrupt, "unsupported tensor dtype");
      rows.push_back({t.at("name").get<std::string>(), t.at("shape").get<Shape>(), t.at("byte_offset").get<std::uint64_t>(),
                      t.at("byte_len").get<std::uint64_t>()});
    }
  } catch (const json::exception& e) {
    fail(ErrorCode::Corrupt, std::string("malformed header: ") + e.what());
  } catch (const Error& e) {
    if (e.code() == ErrorCode::Corrupt) throw;
    fail(ErrorCode::Corrupt, std::string("invalid header: ") + e.what());
  }

  // Table must tile the payload exactly, in order, before anything is read.
  std::uint64_t expected = 0;
  std::set<std::string> names;
  for (const auto& r : rows) {
    if (r.shape.empty() || std::any_of(r.shape.begin(), r.shape.end(), [](std::int64_t d) { return d <= 0; }))
      fail(ErrorCode::Corrupt, "tensor '" + r.name + "' has an invalid shape");
    if (r.offset != expected) fail(ErrorCode::Corrupt, "tensor '" + r.name + "' offset is not contiguous");
    if (r.len != static_cast<std::uint64_t>(shape_numel(r.shape)) * sizeof(float)) fail(ErrorCode::Corrupt, "tensor '" + r.name + "' length mismatch");
    if (!names.insert(r.name).second) fail(ErrorCode::Corrupt, "duplicate tensor '" + r.name + "'");
    expected += r.len;
  }
  if (bytes.size() != kPreamble + header_len + expected) fail(ErrorCode::Corrupt, "file length does not match the tensor table");

  const auto base = kPreamble + header_len;
  for (const auto& r : rows) {
    Tensor<float> t(r.shape);
    std::memcpy(t.data(), bytes.data() + base + r.offset, r.len);
    ck.tensors.add(r.name, std::move(t));
  }
  return ck;
}

void save_checkpoint(const std::filesystem::path& path, const ParamStore<float>& tensors, const CheckpointMeta& meta) {
  const auto bytes = serialize_checkpoint(tensors, meta);
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) fail(ErrorCode::Io, "cannot write " + path.string());
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) fail(ErrorCode::Io, "write failed for " + path.string());
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream probe(path, std::ios::binary);
  if (!probe) fail(ErrorCode::Corrupt, "cannot open checkpoint " + path.string());
  probe.close();
  return parse_checkpoint(read_file(path));
}

ParamStore<float> served_weights(const ParamStore<float>& all) {
  ParamStore<float> out;
  for (const auto& e : all.entries())
    if (e.name.rfind("raw.", 0) != 0 && e.name.rfind("lora.", 0) != 0) out.add(e.name, e.value);
  return out;
}

ParamStore<float> with_prefix(const ParamStore<float>& all, const std::string& prefix, bool strip) {
  ParamStore<float> out;
  for (const auto& e : all.entries())
    if (e.name.rfind(prefix, 0) == 0) out.add(strip ? e.name.substr(prefix.size()) : e.name, e.value);
  return out;
}

void write_ppm(const std::filesystem::path& path, const Tensor<float>& image) {
  if (image.rank() != 3 || image.dim(0) != 3) fail(ErrorCode::ShapeMismatch, "ppm output needs a (3, H, W) image");
  const auto h = image.dim(1), w = image.dim(2);
  std::string out = "P6\n" + std::to_string(w) + " " + std::to_string(h) + "\n255\n";
  for (std::int64_t y = 0; y < h; ++y)
    for (std::int64_t x = 0; x < w; ++x)
      for (std::int64_t c = 0; c < 3; ++c) out.push_back(static_cast<char>(to_pixel(image[(c * h + y) * w + x])));
  write_file(path, out);
}

Tensor<float> read_ppm(const std::filesystem::path& path) {
  const auto bytes = read_file(path);
  std::size_t pos = 0;
  auto token = [&]() {
    while (pos < bytes.size()) {
      if (bytes[pos] == '#') {
        while (pos < bytes.size() && bytes[pos] != '\n') ++pos;
      } else if (std::isspace(bytes[pos])) {
        ++pos;
      } else {
        break;
      }
    }
    std::string t;
    while (pos < bytes.size() && !std::isspace(bytes[pos])) t.push_back(static_cast<char>(bytes[pos++]));
    return t;
  };
  if (token() != "P6") fail(ErrorCode::Corrupt, path.string() + " is not a binary PPM");
  std::int64_t w = 0, h = 0, maxv = 0;
  try {
    w = std::stoll(token());
    h = std::stoll(token());
    maxv = std::stoll(token());
  } catch (const std::exception&) {
    fail(ErrorCode::Corrupt, path.string() + " has a malformed PPM header");
  }
  ++pos;
  if (w < 1 || h < 1 || maxv != 255) fail(ErrorCode::Corrupt, path.string() + " must be an 8-bit PPM");
  if (bytes.size() < pos + static_cast<std::size_t>(w * h * 3)) fail(ErrorCode::Corrupt, path.string() + " is truncated");
  Tensor<float> img(Shape{3, h, w});
  for (std::int64_t y = 0; y < h; ++y)
    for (std::int64_t x = 0; x < w; ++x)
      for (std::int64_t c = 0; c < 3; ++c)
        img[(c * h + y) * w + x] = static_cast<float>(bytes[pos + static_cast<std::size_t>((y * w + x) * 3 + c)]) / 127.5f - 1.0f;
  return img;
}

Tensor<float> read_ppm_dir(const std::filesystem::path& dir) {
  std::vector<std::filesystem::path> files;
  if (!std::filesystem::is_directory(dir)) fail(ErrorCode::Io, dir.string() + " is not a directory");
  for (const auto& e : std::filesystem::directory_iterator(dir))
    if (e.is_regular_file() && e.path().extension() == ".ppm") files.push_back(e.path());
  if (files.empty()) fail(ErrorCode::EmptyDataset, "no .ppm files in " + dir.string());
  std::sort(files.begin(), files.end());
  const auto first = read_ppm(files.front());
  Tensor<float> out(Shape{static_cast<std::int64_t>(files.size()), 3, first.dim(1), first.dim(2)});
  const auto per = first.numel();
  for (std::size_t i = 0; i < files.size(); ++i) {
    const auto img = i == 0 ? first : read_ppm(files[i]);
    if (img.shape() != first.shape()) fail(ErrorCode::ShapeMismatch, files[i].string() + " differs in size");
    std::copy_n(img.data(), per, out.data() + static_cast<std::int64_t>(i) * per);
  }
  return out;
}

std::vector<std::uint8_t> read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) fail(ErrorCode::Io, "cannot read " + path.string());
  return std::vector<std::uint8_t>(std::istreambuf_iterator<char>(in), {});
}

void write_file(const std::filesystem::path& path, const std::string& text) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) fail(ErrorCode::Io, "cannot write " + path.string());
  out << text;
  if (!out) fail(ErrorCode::Io, "write failed for " + path.string());
}

}  // namespace tiue
