#include <gtest/gtest.h>

#include "hnd/errors.hpp"
#include "hnd/raster.hpp"
#include "support.hpp"

using namespace hnd;
using hnd::test::TempDir;

TEST(Raster, SetAndCount) {
  BinaryRaster r(3, 2);
  EXPECT_EQ(r.foreground_count(), 0u);
  r.set(2, 1);
  r.set(0, 0);
  EXPECT_TRUE(r.at(2, 1));
  EXPECT_FALSE(r.at(1, 1));
  EXPECT_EQ(r.foreground_count(), 2u);
  r.set(2, 1, false);
  EXPECT_EQ(r.foreground_count(), 1u);
}

TEST(Raster, PgmRoundTrip) {
  TempDir dir;
  std::mt19937_64 rng(11);
  for (int i = 0; i < 20; ++i) {
    const auto r = test::random_mask(rng, 1 + i % 7, 1 + i % 5);
    write_pgm(dir / "m.pgm", r);
    EXPECT_EQ(read_pgm(dir / "m.pgm"), r);
    const auto header = read_pgm_header(dir / "m.pgm");
    EXPECT_EQ(header.width, r.width());
    EXPECT_EQ(header.height, r.height());
  }
}

TEST(Raster, PgmCommentsAndNonzeroForeground) {
  TempDir dir;
  std::string bytes = "P5\n# made by hand\n3 1\n# another\n200\n";
  bytes += std::string{'\0', '\x07', '\xc8'};
  test::write_file(dir / "c.pgm", bytes);
  const auto r = read_pgm(dir / "c.pgm");
  EXPECT_FALSE(r.at(0, 0));
  EXPECT_TRUE(r.at(1, 0));
  EXPECT_TRUE(r.at(2, 0));
}

TEST(Raster, PgmErrors) {
  TempDir dir;
  EXPECT_THROW(read_pgm(dir / "absent.pgm"), Error);
  test::write_file(dir / "p2.pgm", "P2\n1 1\n255\n0\n");
  try {
    read_pgm(dir / "p2.pgm");
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::ParseError);
  }
  test::write_file(dir / "short.pgm", std::string("P5\n4 4\n255\n") + std::string(3, '\1'));
  try {
    read_pgm(dir / "short.pgm");
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::TruncatedFile);
  }
}
