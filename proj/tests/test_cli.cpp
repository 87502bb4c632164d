#include <gtest/gtest.h>

#include <sys/wait.h>

#include <cstdlib>
#include <filesystem>

#include "test_util.hpp"
#include "xfedit/config.hpp"
#include "xfedit/io.hpp"

#ifndef XFEDIT_CLI
#error "XFEDIT_CLI must point at the xfedit binary"
#endif

using namespace xfedit;
using namespace xfedit::testing;
namespace fs = std::filesystem;

namespace {

class Cli : public ::testing::Test {
 protected:
  void SetUp() override {
    dir_ = fs::temp_directory_path() /
           (std::string("xfedit_cli_") + ::testing::UnitTest::GetInstance()->current_test_info()->name());
    fs::remove_all(dir_);
    fs::create_directories(dir_);
  }
  void TearDown() override { fs::remove_all(dir_); }

  int run(const std::string& args) const {
    const std::string cmd = "cd '" + dir_.string() + "' && '" XFEDIT_CLI "' " + args + " > out.log 2>&1";
    const int status = std::system(cmd.c_str());
    return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
  }

  /// Tiny model plus a matching config file.
  void tiny_setup() const {
    io::save_checkpoint(*jittered_model(tiny_config()), dir_ / "model.xfa");
    RunConfig c;
    c.model = tiny_config();
    c.image_size = 8;
    c.frames = 2;
    c.schedule.inference_steps = 5;
    c.edit.num_steps = 5;
    c.paths.checkpoint = "model.xfa";
    io::write_text(dir_ / "run.json", dump_canonical(to_json(c)));
  }

  fs::path dir_;
};

}  // namespace

TEST_F(Cli, ExitCodes) {
  EXPECT_EQ(run(""), 2);
  EXPECT_EQ(run("bogus"), 2);
  io::write_text(dir_ / "bad.json", R"({"no_such_key": 1})");
  EXPECT_EQ(run("render -c bad.json --prompt 'a red square moving right on black'"), 2);
  EXPECT_EQ(run("render --prompt 'a red hexagon moving right on black'"), 4);
  fs::create_directories(dir_ / "empty");
  EXPECT_EQ(run("invert --checkpoint missing.xfa --video nowhere --source-prompt 'a red square moving right on black'"), 3);
  EXPECT_EQ(run("reconstruct --checkpoint missing.xfa --record nowhere"), 3);
  tiny_setup();
  EXPECT_EQ(run("invert -c run.json --video empty --source-prompt 'a red square moving right on black'"), 4);
  EXPECT_EQ(run("reconstruct -c run.json --record nowhere"), 3);
}

TEST_F(Cli, IdentityEditMatchesReconstructFrames) {
  tiny_setup();
  const std::string src = "'a red square moving right on black'";
  ASSERT_EQ(run("render -c run.json --out clip --prompt " + src), 0);
  ASSERT_EQ(run("invert -c run.json --video clip --record rec --source-prompt " + src + " --out inv"), 0);
  ASSERT_EQ(run("reconstruct -c run.json --record rec --out recon"), 0);
  ASSERT_EQ(run("edit -c run.json --record rec --target-prompt " + src + " --tau-m 1 --tau-null 1 --out edit"), 0);
  for (const char* f : {"0000.png", "0001.png"})
    EXPECT_EQ(io::read_text(dir_ / "edit" / "frames" / f), io::read_text(dir_ / "recon" / "frames" / f)) << f;
  EXPECT_FALSE(fs::exists(dir_ / "edit" / "frames" / "0002.png"));
  EXPECT_TRUE(fs::exists(dir_ / "edit" / "run.manifest"));
  EXPECT_TRUE(fs::exists(dir_ / "edit" / "config.json"));
}
