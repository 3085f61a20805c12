#include "sv/encoding.hpp"

#include <cmath>

namespace sv {

void EncodingConfig::validate() const {
  if (fourier_octaves < 1 || fourier_octaves > 16)
    throw ConfigError("encoding: fourier_octaves must be in [1, 16]");
  if (uses_hash()) {
    if (hash_levels < 1)
      throw ConfigError("encoding: hash_levels must be >= 1");
    if (base_res < 1)
      throw ConfigError("encoding: base_res must be >= 1");
    if (finest_res < base_res)
      throw ConfigError("encoding: finest_res must be >= base_res");
    if (hash_levels == 1 && finest_res != base_res)
      throw ConfigError(
          "encoding: a single hash level requires base_res == finest_res");
    if (channels < 1 || channels > kMaxHashChannels)
      throw ConfigError("encoding: channels out of supported range");
    if (table_size < 2 || (table_size & (table_size - 1)) != 0)
      throw ConfigError("encoding: table_size must be a power of two >= 2");
    make_hash_meta(*this);  // validates the resolution schedule
  }
  if (!(alpha >= 0.0) || !std::isfinite(alpha))
    throw ConfigError("encoding: alpha must be finite and >= 0");
}

HashGridMeta make_hash_meta(const EncodingConfig& cfg) {
  HashGridMeta m;
  m.levels = cfg.hash_levels;
  m.channels = cfg.channels;
  m.table_size = cfg.table_size;
  double growth =
      cfg.hash_levels > 1
          ? std::exp(std::log(static_cast<double>(cfg.finest_res) /
                              cfg.base_res) /
                     (cfg.hash_levels - 1))
          : 1.0;
  for (int l = 0; l < cfg.hash_levels; ++l) {
    int r = static_cast<int>(
        std::lround(cfg.base_res * std::pow(growth, l)));
    m.level_res.push_back(r);
    std::int64_t dense_rows = static_cast<std::int64_t>(r + 1) * (r + 1) *
                              (r + 1);
    bool dense = dense_rows <= cfg.table_size;
    m.level_dense.push_back(dense);
    m.level_rows.push_back(dense ? dense_rows : cfg.table_size);
  }
  if (m.level_res.front() != cfg.base_res ||
      m.level_res.back() != cfg.finest_res)
    throw ConfigError("encoding: resolution schedule misses its endpoints");
  for (int l = 1; l < cfg.hash_levels; ++l)
    if (m.level_res[l] <= m.level_res[l - 1])
      throw ConfigError(
          "encoding: resolution schedule must be strictly increasing");
  return m;
}

}  // namespace sv
