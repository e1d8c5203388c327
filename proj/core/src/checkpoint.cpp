#include "dreamprm/prm/checkpoint.hpp"

#include <array>
#include <bit>
#include <cstring>

#include "json_util.hpp"

namespace dreamprm::prm {

using detail::json;

namespace {

constexpr std::array<char, 8> kMagic = {'D', 'P', 'R', 'M', 'C', 'K', 'P', 'T'};

std::uint64_t to_le(std::uint64_t v) {
  if constexpr (std::endian::native == std::endian::big) {
    std::uint64_t r = 0;
    for (int i = 0; i < 8; ++i) r |= ((v >> (8 * i)) & 0xffULL) << (8 * (7 - i));
    return r;
  }
  return v;
}

void put_u64(std::ostream& out, std::uint64_t v) {
  v = to_le(v);
  out.write(reinterpret_cast<const char*>(&v), sizeof v);
}

std::uint64_t get_u64(std::istream& in) {
  std::uint64_t v = 0;
  in.read(reinterpret_cast<char*>(&v), sizeof v);
  return to_le(v);
}

void put_doubles(std::ostream& out, const ad::ParamVector& p) {
  for (double d : p.values()) put_u64(out, std::bit_cast<std::uint64_t>(d));
}

std::vector<double> get_doubles(std::istream& in, std::size_t n) {
  std::vector<double> v(n);
  for (auto& d : v) d = std::bit_cast<double>(get_u64(in));
  return v;
}

}  // namespace

void write_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt) {
  if (ckpt.phi.size() != ckpt.arch.num_params()) throw ShapeError("write_checkpoint: phi does not match architecture");
  const json header{{"schema_version", kCheckpointSchemaVersion},
                    {"architecture",
                     {{"feature_dim", ckpt.arch.feature_dim},
                      {"hidden", ckpt.arch.hidden},
                      {"input_dim", ckpt.arch.input_dim()}}},
                    {"num_params", ckpt.phi.size()},
                    {"K", ckpt.alpha.size()},
                    {"step", ckpt.step},
                    {"variant", ckpt.variant}};
  const std::string text = header.dump();
  auto out = detail::open_out(path, std::ios::out | std::ios::binary);
  out.write(kMagic.data(), kMagic.size());
  put_u64(out, text.size());
  out.write(text.data(), static_cast<std::streamsize>(text.size()));
  put_doubles(out, ckpt.phi);
  put_doubles(out, ckpt.alpha);
  if (!out) throw Error("write failed for '" + path.string() + "'");
}

Checkpoint read_checkpoint(const std::filesystem::path& path) {
  auto in = detail::open_in(path, std::ios::in | std::ios::binary);
  std::array<char, 8> magic{};
  in.read(magic.data(), magic.size());
  if (!in || magic != kMagic) throw Error("'" + path.string() + "' is not a checkpoint file");
  const std::uint64_t len = get_u64(in);
  if (!in || len > (1u << 20)) throw Error("'" + path.string() + "': corrupt checkpoint header");
  std::string text(len, '\0');
  in.read(text.data(), static_cast<std::streamsize>(len));
  json header;
  try {
    header = json::parse(text);
  } catch (const json::exception& e) {
    throw Error("'" + path.string() + "': " + e.what());
  }
  if (header.at("schema_version").get<int>() != kCheckpointSchemaVersion) {
    throw Error("'" + path.string() + "': unsupported checkpoint schema_version");
  }
  Checkpoint ckpt;
  ckpt.arch.feature_dim = header.at("architecture").at("feature_dim").get<int>();
  ckpt.arch.hidden = header.at("architecture").at("hidden").get<int>();
  ckpt.step = header.at("step").get<std::int64_t>();
  ckpt.variant = header.at("variant").get<std::string>();
  const auto n = header.at("num_params").get<std::size_t>();
  const auto k = header.at("K").get<std::size_t>();
  if (n != ckpt.arch.num_params()) throw Error("'" + path.string() + "': num_params does not match architecture");
  ckpt.phi = ad::ParamVector(get_doubles(in, n), ckpt.arch.blocks());
  ckpt.alpha = ad::ParamVector(get_doubles(in, k));
  if (!in) throw Error("'" + path.string() + "': truncated parameter block");
  return ckpt;
}

}  // namespace dreamprm::prm
