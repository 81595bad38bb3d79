#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>

#include "dbsfm/checkpoint.hpp"
#include "dbsfm/error.hpp"
#include "test_util.hpp"

using namespace dbsfm;

TEST(Checkpoint, RoundTripIsBitIdentical) {
  const auto cfg = testutil::small_config(7, 4);
  const ParamStore p = testutil::randomized_params(cfg, 21);
  const auto dir = std::filesystem::temp_directory_path() / "dbsfm_ckpt_test";
  std::filesystem::create_directories(dir);
  const auto path = dir / "a.dbsfm";
  save_checkpoint(path, cfg, p);
  const Checkpoint back = load_checkpoint(path);
  EXPECT_EQ(back.config, cfg);
  EXPECT_EQ(back.params.names(), p.names());
  for (const auto& n : p.names()) {
    const auto& a = p.at(n).values;
    const auto& b = back.params.at(n).values;
    ASSERT_EQ(a.size(), b.size());
    EXPECT_EQ(std::memcmp(a.data(), b.data(), a.size() * sizeof(double)), 0) << n;
  }
  EXPECT_EQ(encode_checkpoint(back.config, back.params), encode_checkpoint(cfg, p));
  std::filesystem::remove_all(dir);
}

TEST(Checkpoint, CorruptInputIsRejected) {
  const auto cfg = testutil::toy_config();
  const ParamStore p = init_params(cfg, 1);
  std::string bytes = encode_checkpoint(cfg, p);
  EXPECT_EQ(bytes.substr(0, 8), std::string(kCheckpointMagic));

  std::string bad_magic = bytes;
  bad_magic[0] = 'X';
  EXPECT_THROW(decode_checkpoint(bad_magic), FormatError);
  EXPECT_THROW(decode_checkpoint(bytes.substr(0, bytes.size() - 9)), FormatError);
  EXPECT_THROW(decode_checkpoint(""), FormatError);
  EXPECT_THROW(load_checkpoint("/nonexistent/dir/x.dbsfm"), IoError);
}
