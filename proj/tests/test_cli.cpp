#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>
#include <sstream>

#include "cli.hpp"
#include "mbcr/archive.hpp"

namespace fs = std::filesystem;
using mbcr::cli::run;

namespace {

struct Result {
    int code;
    std::string out;
    std::string err;
};

Result call(std::vector<std::string> args) {
    std::ostringstream out, err;
    const int code = run(args, out, err);
    return {code, out.str(), err.str()};
}

std::string slurp(const fs::path& p) {
    std::ifstream is(p, std::ios::binary);
    std::stringstream ss;
    ss << is.rdbuf();
    return ss.str();
}

class CliTest : public ::testing::Test {
protected:
    void SetUp() override {
        dir = fs::temp_directory_path() /
              ("mbcr_cli_" + std::string(::testing::UnitTest::GetInstance()->current_test_info()->name()));
        fs::remove_all(dir);
        fs::create_directories(dir);
    }
    void TearDown() override { fs::remove_all(dir); }
    std::string d(const std::string& sub = "") const { return (sub.empty() ? dir : dir / sub).string(); }
    fs::path dir;
};

}  // namespace

TEST_F(CliTest, SynthCountsAndDeterminism) {
    auto r = call({"synth", "--n", "40", "--seed", "7", "--balance", "0.5", "--out", d("a")});
    ASSERT_EQ(r.code, 0) << r.err;
    EXPECT_NE(r.out.find("normal=20"), std::string::npos);
    EXPECT_NE(r.out.find("abnormal=20"), std::string::npos);
    std::size_t files = 0;
    for (const auto& e : fs::directory_iterator(d("a"))) files += e.path().extension() == ".csv";
    EXPECT_EQ(files, 40u);
    ASSERT_EQ(call({"synth", "--n", "40", "--seed", "7", "--out", d("b")}).code, 0);
    for (const auto& e : fs::directory_iterator(d("a")))
        EXPECT_EQ(slurp(e.path()), slurp(dir / "b" / e.path().filename())) << e.path();
}

TEST_F(CliTest, PaperPreprocessRejectsShortRecord) {
    ASSERT_EQ(call({"synth", "--n", "4", "--out", d()}).code, 0);
    mbcr::EcgRecord shortrec = mbcr::read_record_file(dir / "syn00000.csv");
    shortrec.id = "short7s";
    for (auto& row : shortrec.samples) row.resize(3500);
    mbcr::write_record_file(dir / "short7s.csv", shortrec);
    {
        std::ofstream m(dir / "manifest.txt", std::ios::app);
        m << "short7s.csv\n";
    }
    auto r = call({"preprocess", "--out", d()});
    ASSERT_EQ(r.code, 0) << r.err;
    EXPECT_NE(r.out.find("cached=4"), std::string::npos);
    EXPECT_NE(slurp(dir / "rejected.txt").find("short7s\ttoo short"), std::string::npos);
    const auto cache = mbcr::load_cache(dir / "cache.mbcr");
    for (const auto& t : cache.inputs) EXPECT_EQ(t.shape, (mbcr::Shape{8, 2000}));
    const std::string first = slurp(dir / "cache.mbcr");
    ASSERT_EQ(call({"preprocess", "--out", d()}).code, 0);
    EXPECT_EQ(slurp(dir / "cache.mbcr"), first);
}

TEST_F(CliTest, MissingManifestFails) {
    auto r = call({"preprocess", "--out", d("nothing")});
    EXPECT_NE(r.code, 0);
    EXPECT_EQ(r.err.rfind("error[input]:", 0), 0u) << r.err;
    EXPECT_EQ(std::count(r.err.begin(), r.err.end(), '\n'), 1);
}

TEST_F(CliTest, TrainEvalCrossvalMini) {
    const std::vector<std::string> common{"--profile", "mini", "--out", d(), "--seed", "7"};
    auto with = [&](std::vector<std::string> a) {
        a.insert(a.end(), common.begin(), common.end());
        return call(a);
    };
    ASSERT_EQ(with({"synth", "--n", "40"}).code, 0);
    ASSERT_EQ(with({"preprocess"}).code, 0);
    auto tr = with({"train", "--epochs", "2", "--batch-size", "8"});
    ASSERT_EQ(tr.code, 0) << tr.err;
    EXPECT_TRUE(fs::exists(dir / "model.mbcr"));
    EXPECT_TRUE(fs::exists(dir / "loss_trace.txt"));
    const std::string report = slurp(dir / "train_report.txt");
    EXPECT_NE(report.find("\"epochs\":2"), std::string::npos) << report;

    auto ev = with({"eval"});
    ASSERT_EQ(ev.code, 0) << ev.err;
    EXPECT_EQ(tr.out.substr(0, tr.out.find("checkpoint=")), ev.out);

    const std::string ckpt = slurp(dir / "model.mbcr");
    ASSERT_EQ(with({"train", "--epochs", "2", "--batch-size", "8"}).code, 0);
    EXPECT_EQ(slurp(dir / "model.mbcr"), ckpt);
    EXPECT_EQ(slurp(dir / "train_report.txt"), report);

    auto cv = with({"crossval", "--variant", "L", "--folds", "2", "--epochs", "1"});
    ASSERT_EQ(cv.code, 0) << cv.err;
    EXPECT_NE(cv.out.find("Fold-1"), std::string::npos);
    EXPECT_NE(cv.out.find("Fold-2"), std::string::npos);
    EXPECT_EQ(cv.out.find("Fold-3"), std::string::npos);
    EXPECT_NE(cv.out.find("Average"), std::string::npos);
    EXPECT_TRUE(fs::exists(dir / "report.kv"));

    auto single = with({"train", "--epochs", "1", "--lead", "V2", "--checkpoint", d("v2.mbcr")});
    ASSERT_EQ(single.code, 0) << single.err;
    EXPECT_EQ(with({"eval", "--lead", "V2", "--checkpoint", d("v2.mbcr")}).code, 0);
}

TEST_F(CliTest, CorruptCheckpointNamesFile) {
    ASSERT_EQ(call({"synth", "--n", "20", "--profile", "mini", "--out", d()}).code, 0);
    ASSERT_EQ(call({"preprocess", "--profile", "mini", "--out", d()}).code, 0);
    {
        std::ofstream bad(dir / "bad.mbcr", std::ios::binary);
        bad << "JUNKJUNK";
    }
    auto r = call({"eval", "--profile", "mini", "--out", d(), "--checkpoint", d("bad.mbcr")});
    EXPECT_NE(r.code, 0);
    EXPECT_EQ(r.err.rfind("error[checkpoint]:", 0), 0u) << r.err;
    EXPECT_NE(r.err.find("bad.mbcr"), std::string::npos);
    EXPECT_NE(r.err.find("bad magic"), std::string::npos);

    mbcr::TensorArchive future;
    std::stringstream ss;
    future.write(ss);
    std::string bytes = ss.str();
    bytes[4] = 9;
    {
        std::ofstream f(dir / "future.mbcr", std::ios::binary);
        f << bytes;
    }
    r = call({"eval", "--profile", "mini", "--out", d(), "--checkpoint", d("future.mbcr")});
    EXPECT_NE(r.code, 0);
    EXPECT_NE(r.err.find("version"), std::string::npos);
}

TEST_F(CliTest, ConfigFileAndOverrides) {
    {
        std::ofstream f(dir / "cfg.json");
        f << R"({"n_records": 6, "seed": 3, "duration_s": 2.0})";
    }
    auto r = call({"synth", "--config", d("cfg.json"), "--n", "8", "--out", d("o")});
    ASSERT_EQ(r.code, 0) << r.err;
    EXPECT_NE(r.out.find("records=8"), std::string::npos);

    const auto cfg = mbcr::cli::resolve_config(dir / "cfg.json", {{"seed", 9}});
    EXPECT_EQ(cfg.seed, 9u);
    EXPECT_EQ(cfg.n_records, 6u);
    EXPECT_EQ(cfg.duration_s, 2.0);
    EXPECT_EQ(cfg.epochs, 10u);
    EXPECT_EQ(mbcr::cli::RunConfig::from_json(cfg.to_json()).to_json(), cfg.to_json());

    {
        std::ofstream f(dir / "bad.json");
        f << R"({"n_recrods": 6})";
    }
    r = call({"synth", "--config", d("bad.json"), "--out", d("o")});
    EXPECT_NE(r.code, 0);
    EXPECT_NE(r.err.find("n_recrods"), std::string::npos);
    {
        std::ofstream f(dir / "type.json");
        f << R"({"epochs": "many"})";
    }
    EXPECT_NE(call({"synth", "--config", d("type.json"), "--out", d("o")}).code, 0);
}

TEST_F(CliTest, UsageErrors) {
    EXPECT_EQ(call({}).code, 2);
    EXPECT_EQ(call({"frobnicate"}).code, 2);
    auto r = call({"train", "--variant", "Q", "--out", d()});
    EXPECT_NE(r.code, 0);
    EXPECT_EQ(r.err.rfind("error[", 0), 0u);
    EXPECT_NE(call({"train", "--lead", "aVR", "--out", d()}).code, 0);
}

TEST(CliGradcheck, PassesOnFreshBuild) {
    std::ostringstream out, err;
    ASSERT_EQ(run({"gradcheck"}, out, err), 0) << out.str() << err.str();
    const std::string text = out.str();
    EXPECT_EQ(text.find("FAIL"), std::string::npos);
    const auto pos = text.rfind("max_rel_error=");
    ASSERT_NE(pos, std::string::npos);
    EXPECT_LT(std::stod(text.substr(pos + 14)), 1e-4);
}
