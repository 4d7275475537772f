#include <gtest/gtest.h>

#include <cmath>
#include <cstring>
#include <fstream>

#include "fmbench/encoder.hpp"
#include "fmbench/feature_dump.hpp"
#include "fmbench/synthetic.hpp"
#include "json.hpp"
#include "oracles.hpp"

using namespace fmbench;
namespace fs = std::filesystem;

namespace {

Slice2D noise_slice(int side, std::uint64_t seed) {
  SplitMix64 g(seed);
  Slice2D s(side, side);
  for (double& v : s.data) v = g.normal();
  return s;
}

void expect_same_map(const FeatureMap& a, const FeatureMap& b) {
  EXPECT_EQ(a.descriptor, b.descriptor);
  EXPECT_EQ(a.grid_h, b.grid_h);
  EXPECT_EQ(a.grid_w, b.grid_w);
  ASSERT_EQ(a.class_token.size(), b.class_token.size());
  ASSERT_EQ(a.patch_tokens.size(), b.patch_tokens.size());
  EXPECT_EQ(std::memcmp(a.class_token.data(), b.class_token.data(), a.class_token.size() * 4), 0);
  EXPECT_EQ(std::memcmp(a.patch_tokens.data(), b.patch_tokens.data(), a.patch_tokens.size() * 4), 0);
}

std::vector<char> slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), {}};
}

}  // namespace

TEST(ToyEncoder, Deterministic) {
  const Slice2D s = noise_slice(64, 1);
  expect_same_map(toy_encode(s, 7, 32), toy_encode(s, 7, 32));
}

TEST(ToyEncoder, GeometryAt512) {
  ToyEncoder enc(3, 8);
  const FeatureMap m = encode_slice(Slice2D(512, 512, 0.0), enc);
  EXPECT_EQ(m.grid_h, 32);
  EXPECT_EQ(m.grid_w, 32);
  EXPECT_EQ(m.patch_tokens.size(), 32u * 32u * 8u);
  EXPECT_EQ(m.class_token.size(), 8u);
}

TEST(ToyEncoder, ZeroSliceIsBiasPlusPosition) {
  ToyEncoder enc(5, 16, 64, 16);
  const FeatureMap m = enc.encode(Slice2D(64, 64, 0.0));
  for (int r = 0; r < 4; ++r)
    for (int c = 0; c < 4; ++c) {
      const auto pos = enc.positional_code(r, c);
      const auto tok = m.token(r * 4 + c);
      for (int j = 0; j < 16; ++j)
        EXPECT_FLOAT_EQ(tok[j], static_cast<float>(static_cast<double>(enc.bias()[j]) + pos[j]));
    }
}

TEST(ToyEncoder, Linearity) {
  const FeatureMap z = toy_encode(Slice2D(64, 64, 0.0), 9, 32);
  for (int t = 0; t < 5; ++t) {
    const Slice2D x = noise_slice(64, 20 + t);
    const double a = 0.5 + t;
    Slice2D ax = x;
    for (double& v : ax.data) v *= a;
    const FeatureMap fx = toy_encode(x, 9, 32), fax = toy_encode(ax, 9, 32);
    for (std::size_t i = 0; i < fx.patch_tokens.size(); ++i) {
      const double lhs = static_cast<double>(fax.patch_tokens[i]) - z.patch_tokens[i];
      const double rhs = a * (static_cast<double>(fx.patch_tokens[i]) - z.patch_tokens[i]);
      ASSERT_NEAR(lhs, rhs, 1e-5);
    }
  }
}

TEST(ToyEncoder, ClassTokenIsMean) {
  const FeatureMap m = toy_encode(noise_slice(48, 2), 1, 24);
  for (int j = 0; j < 24; ++j) {
    double s = 0;
    for (int c = 0; c < m.cells(); ++c) s += m.token(c)[j];
    EXPECT_NEAR(m.class_token[j], s / m.cells(), 1e-6);
  }
}

TEST(ToyEncoder, SeedsDiffer) {
  const Slice2D s = noise_slice(32, 3);
  const FeatureMap a = toy_encode(s, 1, 16), b = toy_encode(s, 2, 16);
  double diff = 0;
  for (std::size_t i = 0; i < a.patch_tokens.size(); ++i)
    diff = std::max(diff, std::abs(static_cast<double>(a.patch_tokens[i]) - b.patch_tokens[i]));
  EXPECT_GT(diff, 0.0);
}

TEST(ToyEncoder, ShapeErrors) {
  EXPECT_THROW(toy_encode(Slice2D(32, 48), 1, 8), Error);
  EXPECT_THROW(toy_encode(Slice2D(40, 40), 1, 8), Error);
  ToyEncoder enc(1, 8, 64, 16);
  try {
    encode_slice(Slice2D(32, 32), enc);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::shape);
  }
}

TEST(ToyEncoder, TemplateSeparability) {
  for (int dim : {32, 64}) {
    const int n_classes = 4, per = 20;
    std::vector<std::vector<std::vector<double>>> tokens(n_classes);
    SplitMix64 noise(77);
    for (int c = 0; c < n_classes; ++c) {
      const auto pat = synth::class_pattern(c, 11);
      for (int i = 0; i < per; ++i) {
        Slice2D s(64, 64);
        for (int y = 0; y < 64; ++y)
          for (int x = 0; x < 64; ++x) s.at(y, x) = pat[(y % 16) * 16 + x % 16] + 0.3 * noise.normal();
        const FeatureMap m = toy_encode(s, 7, dim);
        tokens[c].emplace_back(m.class_token.begin(), m.class_token.end());
      }
    }
    std::vector<std::vector<double>> centroid(n_classes, std::vector<double>(dim, 0.0));
    double spread = 0.0;
    for (int c = 0; c < n_classes; ++c) {
      for (const auto& t : tokens[c])
        for (int j = 0; j < dim; ++j) centroid[c][j] += t[j] / per;
      double ss = 0;
      for (const auto& t : tokens[c])
        for (int j = 0; j < dim; ++j) ss += (t[j] - centroid[c][j]) * (t[j] - centroid[c][j]);
      spread = std::max(spread, std::sqrt(ss / per));
    }
    double between = 1e300;
    for (int a = 0; a < n_classes; ++a)
      for (int b = a + 1; b < n_classes; ++b) {
        double d2 = 0;
        for (int j = 0; j < dim; ++j) d2 += (centroid[a][j] - centroid[b][j]) * (centroid[a][j] - centroid[b][j]);
        between = std::min(between, std::sqrt(d2));
      }
    EXPECT_GT(between, 5.0 * spread) << "dim " << dim;
  }
}

TEST(FeatureDump, RoundTripThreeMaps) {
  oracle::TempDir dir("dump_rt");
  std::vector<FeatureMap> maps;
  for (int i = 0; i < 3; ++i) {
    Slice2D s = noise_slice(32, 40 + i);
    s.volume_id = "vol" + std::to_string(i);
    s.z_index = i * 2;
    FeatureMap m = toy_encode(s, 4, 12);
    m.sample_id = "s" + std::to_string(i);
    maps.push_back(m);
  }
  write_feature_dump(maps, dir.path / "d.fmfd");
  const auto back = read_feature_dump(dir.path / "d.fmfd");
  ASSERT_EQ(back.size(), 3u);
  for (int i = 0; i < 3; ++i) {
    expect_same_map(back[i], maps[i]);
    EXPECT_EQ(back[i].sample_id, maps[i].sample_id);
    EXPECT_EQ(back[i].volume_id, maps[i].volume_id);
    EXPECT_EQ(back[i].z_index, maps[i].z_index);
  }
  FeatureDumpReader reader(dir.path / "d.fmfd");
  EXPECT_EQ(reader.size(), 3u);
  EXPECT_TRUE(reader.contains("s1"));
  expect_same_map(reader.read("s2"), maps[2]);
  EXPECT_THROW(reader.read("nope"), Error);
  // identical inputs give identical bytes
  write_feature_dump(maps, dir.path / "e.fmfd");
  EXPECT_EQ(slurp(dir.path / "d.fmfd"), slurp(dir.path / "e.fmfd"));
}

TEST(FeatureDump, HeaderLayout) {
  oracle::TempDir dir("dump_hdr");
  FeatureMap m = toy_encode(noise_slice(32, 1), 4, 3);
  m.sample_id = "only";
  write_feature_dump({m}, dir.path / "d.fmfd");
  const auto bytes = slurp(dir.path / "d.fmfd");
  ASSERT_GE(bytes.size(), 9u);
  EXPECT_EQ(std::string(bytes.begin(), bytes.begin() + 5), "FMFD1");
  std::uint32_t len = 0;
  for (int i = 0; i < 4; ++i) len |= static_cast<std::uint32_t>(static_cast<unsigned char>(bytes[5 + i])) << (8 * i);
  const auto header = nlohmann::json::parse(std::string(bytes.begin() + 9, bytes.begin() + 9 + len));
  EXPECT_EQ(header["embed_dim"], 3);
  EXPECT_EQ(header["grid"], nlohmann::json::array({2, 2}));
  EXPECT_EQ(header["records"][0]["sample_id"], "only");
  EXPECT_EQ(bytes.size(), 9u + len + 4u * (3 + 2 * 2 * 3));
  // first payload value is the class token's first entry, little-endian
  float first = 0;
  std::memcpy(&first, bytes.data() + 9 + len, 4);
  EXPECT_EQ(first, m.class_token[0]);
}

TEST(FeatureDump, EmptyDump) {
  oracle::TempDir dir("dump_empty");
  EncoderDescriptor d{"toy", 32, 16, 8};
  write_feature_dump({}, dir.path / "e.fmfd", d);
  EXPECT_TRUE(read_feature_dump(dir.path / "e.fmfd").empty());
  FeatureDumpReader r(dir.path / "e.fmfd");
  EXPECT_EQ(r.size(), 0u);
  EXPECT_EQ(r.descriptor().embed_dim, 8);
}

TEST(FeatureDump, TruncatedAndBadMagic) {
  oracle::TempDir dir("dump_trunc");
  FeatureMap m = toy_encode(noise_slice(32, 2), 4, 6);
  m.sample_id = "a";
  write_feature_dump({m}, dir.path / "d.fmfd");
  const fs::path p = dir.path / "d.fmfd";
  fs::resize_file(p, fs::file_size(p) - 4);
  for (int pass = 0; pass < 2; ++pass) {
    try {
      if (pass == 0) read_feature_dump(p);
      else FeatureDumpReader r(p);
      FAIL();
    } catch (const Error& e) {
      EXPECT_EQ(e.kind(), ErrorKind::format);
    }
  }
  write_feature_dump({m}, p);
  {
    std::fstream f(p, std::ios::in | std::ios::out | std::ios::binary);
    f.write("XMFD1", 5);
  }
  try {
    read_feature_dump(p);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::format);
  }
}

TEST(FeatureDump, DescriptorConflict) {
  oracle::TempDir dir("dump_conflict");
  FeatureMap a = toy_encode(noise_slice(32, 1), 4, 6), b = toy_encode(noise_slice(32, 1), 5, 6);
  a.sample_id = "a";
  b.sample_id = "b";
  try {
    write_feature_dump({a, b}, dir.path / "d.fmfd");
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::format);
  }
}

TEST(EncoderSpec, ToyAndErrors) {
  const auto enc = make_encoder("toy:seed=7,dim=64,res=64");
  EXPECT_EQ(enc->descriptor().embed_dim, 64);
  EXPECT_EQ(enc->descriptor().input_resolution, 64);
  EXPECT_EQ(enc->descriptor().patch_size, 16);
  EXPECT_THROW(make_encoder("toy:seed"), Error);
  EXPECT_THROW(make_encoder("plugin:dim=8"), Error);
  EXPECT_THROW(make_encoder("mystery:x=1"), Error);
}

TEST(PluginEncoder, MatchesInProcessToy) {
  const std::string spec =
      std::string("plugin:dim=16,res=32,patch=16,id=toyplug,cmd=") + FMBENCH_CLI_PATH + " toy-plugin --seed 7 --dim 16";
  const auto plug = make_encoder(spec);
  ToyEncoder ref(7, 16, 32, 16);
  std::vector<Slice2D> slices;
  // the plugin protocol ships float32 pixels, so round before comparing
  for (int i = 0; i < 3; ++i) {
    slices.push_back(noise_slice(32, 60 + i));
    for (double& v : slices.back().data) v = static_cast<float>(v);
  }
  const auto maps = plug->encode_batch(slices);
  ASSERT_EQ(maps.size(), 3u);
  for (int i = 0; i < 3; ++i) {
    const FeatureMap r = ref.encode(slices[i]);
    EXPECT_EQ(maps[i].descriptor.encoder_id, "toyplug");
    ASSERT_EQ(maps[i].patch_tokens.size(), r.patch_tokens.size());
    EXPECT_EQ(maps[i].patch_tokens, r.patch_tokens);
    EXPECT_EQ(maps[i].class_token, r.class_token);
  }
  // pure function of the slice bytes
  expect_same_map(plug->encode(slices[1]), maps[1]);
}

TEST(PluginEncoder, FailingCommandIsProtocolError) {
  const auto plug = make_encoder("plugin:dim=16,res=32,patch=16,cmd=false");
  try {
    plug->encode(noise_slice(32, 1));
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::protocol);
  }
}
