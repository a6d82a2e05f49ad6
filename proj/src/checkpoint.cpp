#include "stformer/checkpoint.hpp"

#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>

#include "stformer/errors.hpp"

namespace stf {

namespace {

constexpr char kMagic[8] = {'S', 'T', 'F', 'C', 'K', 'P', 'T', '1'};

std::uint64_t to_little(std::uint64_t v) {
  if constexpr (std::endian::native == std::endian::big) {
    v = ((v & 0x00000000000000FFull) << 56) | ((v & 0x000000000000FF00ull) << 40) |
        ((v & 0x0000000000FF0000ull) << 24) | ((v & 0x00000000FF000000ull) << 8) |
        ((v & 0x000000FF00000000ull) >> 8) | ((v & 0x0000FF0000000000ull) >> 24) |
        ((v & 0x00FF000000000000ull) >> 40) | ((v & 0xFF00000000000000ull) >> 56);
  }
  return v;
}

void write_u64(std::ostream& out, std::uint64_t v) {
  v = to_little(v);
  out.write(reinterpret_cast<const char*>(&v), sizeof v);
}

std::uint64_t read_u64(std::istream& in) {
  std::uint64_t v = 0;
  in.read(reinterpret_cast<char*>(&v), sizeof v);
  return to_little(v);
}

}  // namespace

ParameterSet snapshot(const ParameterSet& params) {
  ParameterSet out;
  for (const auto& [name, t] : params) {
    out.emplace(name, Tensor::from(t.shape(), t.to_vector(), true));
  }
  return out;
}

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& c) {
  nlohmann::json header;
  header["format"] = "stformer-checkpoint";
  header["model"] = model_config_to_json(c.model);
  header["epoch"] = c.epoch;
  header["validation"] = metrics_to_json(c.validation);
  header["pheno_stats"] = pheno_stats_to_json(c.pheno_stats);
  header["train_ids"] = c.train_ids;
  header["val_ids"] = c.val_ids;
  header["run"] = c.run;
  nlohmann::json tensors = nlohmann::json::array();
  for (const auto& [name, t] : c.params) {
    tensors.push_back({{"name", name}, {"shape", t.shape()}});
  }
  header["tensors"] = tensors;
  const std::string text = header.dump();

  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot write " + path.string());
  out.write(kMagic, sizeof kMagic);
  write_u64(out, text.size());
  out.write(text.data(), static_cast<std::streamsize>(text.size()));
  for (const auto& [name, t] : c.params) {
    for (double v : t.data()) {
      write_u64(out, std::bit_cast<std::uint64_t>(v));
    }
  }
  if (!out) throw DataError("write failed: " + path.string());
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open " + path.string());
  char magic[sizeof kMagic];
  in.read(magic, sizeof magic);
  if (!in || std::memcmp(magic, kMagic, sizeof kMagic) != 0) {
    throw DataError(path.string() + ": not a checkpoint file");
  }
  const std::uint64_t len = read_u64(in);
  std::string text(len, '\0');
  in.read(text.data(), static_cast<std::streamsize>(len));
  if (!in) throw DataError(path.string() + ": truncated header");

  Checkpoint c;
  try {
    const auto header = nlohmann::json::parse(text);
    std::vector<std::string> errors;
    c.model = model_config_from_json(header.at("model"), errors);
    if (!errors.empty()) {
      std::string msg = path.string() + ": invalid model config:";
      for (const auto& e : errors) msg += "\n  " + e;
      throw DataError(msg);
    }
    c.epoch = header.at("epoch").get<std::size_t>();
    c.validation = metrics_from_json(header.at("validation"));
    c.pheno_stats = pheno_stats_from_json(header.at("pheno_stats"));
    c.train_ids = header.at("train_ids").get<std::vector<std::string>>();
    c.val_ids = header.at("val_ids").get<std::vector<std::string>>();
    c.run = header.at("run");
    for (const auto& entry : header.at("tensors")) {
      const auto name = entry.at("name").get<std::string>();
      const auto shape = entry.at("shape").get<Shape>();
      std::vector<double> values(shape_numel(shape));
      for (double& v : values) v = std::bit_cast<double>(read_u64(in));
      if (!in) throw DataError(path.string() + ": truncated tensor " + name);
      c.params.emplace(name, Tensor::from(shape, std::move(values), true));
    }
  } catch (const nlohmann::json::exception& e) {
    throw DataError(path.string() + ": malformed header: " + e.what());
  }
  if (in.peek() != std::char_traits<char>::eof()) {
    throw DataError(path.string() + ": trailing bytes after tensors");
  }
  return c;
}

}  // namespace stf
