#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <iterator>

#include "balign/datasets.hpp"
#include "balign/errors.hpp"
#include "balign/models.hpp"

namespace balign {

static_assert(std::endian::native == std::endian::little, "archive I/O assumes a little-endian host");

namespace {
constexpr char kMagic[4] = {'B', 'H', 'M', '1'};
}

void write_heatmap_archive(const std::filesystem::path& path, const Tensor& maps) {
  if (maps.rank() != 3) throw DimensionError("heatmap archive needs [K,H,W], got " + shape_str(maps.shape()));
  std::string out(kMagic, 4);
  for (int d = 0; d < 3; ++d) {
    const std::int32_t v = maps.dim(d);
    out.append(reinterpret_cast<const char*>(&v), 4);
  }
  for (double x : maps.storage()) {
    const float f = static_cast<float>(x);
    out.append(reinterpret_cast<const char*>(&f), 4);
  }
  write_file_atomic(path, out);
}

Tensor read_heatmap_archive(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open " + path.string());
  const std::string bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  if (bytes.size() < 16 || std::memcmp(bytes.data(), kMagic, 4) != 0)
    throw DataError(path.string() + " is not a heatmap archive");
  std::int32_t dims[3];
  std::memcpy(dims, bytes.data() + 4, 12);
  for (auto d : dims)
    if (d <= 0 || d > 4096) throw DataError(path.string() + ": bad extent " + std::to_string(d));
  const std::size_t n = static_cast<std::size_t>(dims[0]) * dims[1] * dims[2];
  if (bytes.size() != 16 + 4 * n)
    throw DataError(path.string() + ": expected " + std::to_string(16 + 4 * n) + " bytes, found " +
                    std::to_string(bytes.size()));
  Tensor t({dims[0], dims[1], dims[2]});
  for (std::size_t i = 0; i < n; ++i) {
    float f;
    std::memcpy(&f, bytes.data() + 16 + 4 * i, 4);
    t[i] = f;
  }
  return t;
}

}  // namespace balign
