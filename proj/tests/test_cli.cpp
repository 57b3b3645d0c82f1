#include <gtest/gtest.h>

#include <signal.h>
#include <sys/wait.h>
#include <unistd.h>

#include <cstdio>
#include <fstream>
#include <sstream>

#include "gazeswap/dataset_io.hpp"
#include "gazeswap/image.hpp"
#include "support.hpp"

#include <httplib.h>

using namespace gazeswap;
namespace fs = std::filesystem;

namespace {

const fs::path kFixtures = fs::path(GAZESWAP_SOURCE_DIR) / "data" / "fixtures";

struct Outcome {
    int code = -1;
    std::string out, err;
};

std::string read_file(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    std::ostringstream os;
    os << in.rdbuf();
    return os.str();
}

Outcome run(const std::string& exe, const std::string& args, const testing_support::TempDir& tmp) {
    const fs::path out = tmp / "stdout.txt", err = tmp / "stderr.txt";
    const std::string cmd = "'" + exe + "' " + args + " >'" + out.string() + "' 2>'" + err.string() + "'";
    const int status = std::system(cmd.c_str());
    Outcome r;
    r.code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
    r.out = read_file(out);
    r.err = read_file(err);
    return r;
}

Outcome cli(const std::string& args, const testing_support::TempDir& tmp) { return run(GAZESWAP_CLI, args, tmp); }

std::string q(const fs::path& p) { return "'" + p.string() + "'"; }

std::vector<std::vector<std::string>> read_csv(const fs::path& p) {
    std::vector<std::vector<std::string>> rows;
    std::istringstream in(read_file(p));
    std::string line;
    while (std::getline(in, line)) {
        std::vector<std::string> cells;
        std::string cell;
        std::istringstream ls(line);
        while (std::getline(ls, cell, ',')) cells.push_back(cell);
        if (!line.empty() && line.back() == ',') cells.push_back("");
        rows.push_back(cells);
    }
    return rows;
}

std::vector<fs::path> tree(const fs::path& root) {
    std::vector<fs::path> files;
    for (const auto& e : fs::recursive_directory_iterator(root))
        if (e.is_regular_file()) files.push_back(fs::relative(e.path(), root));
    std::sort(files.begin(), files.end());
    return files;
}

Eigen::Vector3d gaze_vec(double pitch_deg, double yaw_deg) {
    const double t = pitch_deg * M_PI / 180.0, p = yaw_deg * M_PI / 180.0;
    return {-std::cos(t) * std::sin(p), -std::sin(t), -std::cos(t) * std::cos(p)};
}

// Runs match (with normalisation) and swap on the shipped fixtures.
void run_pipeline(const testing_support::TempDir& tmp, const fs::path& out, const std::string& jobs = "1") {
    fs::create_directories(out);
    ASSERT_EQ(cli("--jobs " + jobs + " match --attributes " + q(kFixtures / "attributes.jsonl") + " --faces " +
                      q(kFixtures / "faces.jsonl") + " --out " + q(out / "matches.jsonl"),
                  tmp)
                  .code,
              0);
    const Outcome s = cli("--jobs " + jobs + " swap --faces " + q(kFixtures / "faces.jsonl") + " --matches " + q(out / "matches.jsonl") +
                          " --out-dir " + q(out / "swapped"),
                      tmp);
    ASSERT_EQ(s.code, 0) << s.err;
}

}  // namespace

TEST(Fixtures, RegenerationIsByteIdentical) {
    testing_support::TempDir tmp("fixtures");
    const fs::path out = tmp / "fx";
    ASSERT_EQ(run(GAZESWAP_FIXTURES, q(out), tmp).code, 0);
    const auto shipped = tree(kFixtures), fresh = tree(out);
    ASSERT_FALSE(shipped.empty());
    ASSERT_EQ(shipped, fresh);
    for (const auto& f : shipped) EXPECT_EQ(read_file(kFixtures / f), read_file(out / f)) << f;
}

TEST(Cli, MatchWithoutTopNCutEqualsBruteForce) {
    testing_support::TempDir tmp("cli");
    const Outcome r = cli("match --attributes " + q(kFixtures / "attributes.jsonl") + " --topn 1000 --out " + q(tmp / "m.jsonl"), tmp);
    ASSERT_EQ(r.code, 0) << r.err;
    const auto attrs = load_records<AttributeRecord>(kFixtures / "attributes.jsonl");
    const auto got = load_records<MatchRecord>(tmp / "m.jsonl");
    std::vector<AttributeRecord> queries, cands;
    for (const auto& a : attrs) (a.source == FaceSource::Wider ? queries : cands).push_back(a);
    ASSERT_EQ(got.size(), queries.size());
    auto gender = [](const AttributeRecord& a) { return a.gender[1] > a.gender[0] ? 1 : 0; };
    for (std::size_t k = 0; k < queries.size(); ++k) {
        const auto& w = queries[k];
        bool any_same = false;
        for (const auto& e : cands) any_same |= gender(e) == gender(w);
        std::string best;
        double best_score = -INFINITY, best_distance = 0.0;
        for (const auto& e : cands) {
            if (any_same && gender(e) != gender(w)) continue;
            double lmk = 0.0, pen = 0.0;
            for (std::size_t i = 0; i < 68; ++i) lmk += std::abs(w.lmk[i].x - e.lmk[i].x) + std::abs(w.lmk[i].y - e.lmk[i].y);
            const double d = lmk / 136.0 + (std::abs(w.pose[0] - e.pose[0]) + std::abs(w.pose[1] - e.pose[1])) / 2.0;
            for (std::size_t i = 0; i < 9; ++i) pen += 0.5 * std::abs(w.age[i] - e.age[i]);
            for (std::size_t i = 0; i < 7; ++i) pen += 0.5 * std::abs(w.race[i] - e.race[i]);
            const double s = -d - pen;
            if (s > best_score || (s == best_score && e.face_id < best)) {
                best = e.face_id;
                best_score = s;
                best_distance = d;
            }
        }
        EXPECT_EQ(got[k].wider_id, w.face_id);
        EXPECT_EQ(got[k].xgaze_id, best);
        EXPECT_NEAR(got[k].score, best_score, 1e-12);
        EXPECT_NEAR(got[k].distance, best_distance, 1e-12);
        EXPECT_EQ(got[k].mode, best_distance < 2.0 ? SwapMode::Eyes : SwapMode::Full);
        EXPECT_FALSE(got[k].norm.has_value());
    }
}

TEST(Cli, SwapEndToEnd) {
    testing_support::TempDir tmp("cli");
    run_pipeline(tmp, tmp / "run");
    const auto matches = load_records<MatchRecord>(tmp / "run" / "matches.jsonl");
    ASSERT_EQ(matches.size(), 4u);
    for (const auto& m : matches) ASSERT_TRUE(m.norm.has_value()) << m.wider_id;
    EXPECT_EQ(matches[2].xgaze_id, "e9");
    EXPECT_EQ(matches[2].distance, 0.0);
    EXPECT_EQ(matches[2].mode, SwapMode::Eyes);

    std::map<std::string, FaceEntry> faces;
    for (auto& f : load_records<FaceEntry>(kFixtures / "faces.jsonl")) faces.emplace(f.face_id, f);
    const auto ann = load_records<ImageAnnotation>(tmp / "run" / "swapped" / "annotations.jsonl");
    ASSERT_EQ(ann.size(), 2u);
    EXPECT_EQ(ann[0].image_id, "scene_a");
    EXPECT_EQ(ann[1].image_id, "scene_b");
    ASSERT_EQ(ann[0].faces.size(), 2u);
    ASSERT_EQ(ann[1].faces.size(), 1u);
    ASSERT_EQ(ann[1].skipped.size(), 1u);
    EXPECT_EQ(ann[1].skipped[0].face_id, "w3");
    EXPECT_EQ(ann[1].skipped[0].reason, "too-small");

    for (const auto& img : ann)
        for (const auto& f : img.faces) {
            const auto m = std::find_if(matches.begin(), matches.end(), [&](const auto& r) { return r.wider_id == f.face_id; });
            ASSERT_NE(m, matches.end());
            ASSERT_TRUE(f.provenance.has_value());
            EXPECT_EQ(f.provenance->xgaze_id, m->xgaze_id);
            EXPECT_EQ(f.provenance->mode, m->mode);
            EXPECT_EQ(f.bbox, faces.at(f.face_id).bbox);
            // The label is the source label carried back through the inverse rotation.
            const auto& src = faces.at(m->xgaze_id);
            const Eigen::Vector3d expected = m->norm->rotation.transpose() * gaze_vec((*src.gaze_deg)[0], (*src.gaze_deg)[1]);
            ASSERT_TRUE(f.gaze_deg.has_value());
            EXPECT_LT(testing_support::angle_deg(gaze_vec((*f.gaze_deg)[0], (*f.gaze_deg)[1]), expected), 1e-9);
        }

    for (const auto& img : ann) {
        const Image before = read_png(kFixtures / img.image);
        const Image after = read_png(tmp / "run" / "swapped" / img.image);
        ASSERT_EQ(after.width(), before.width());
        ASSERT_EQ(after.height(), before.height());
        EXPECT_EQ(after.at(0, 0, 0), before.at(0, 0, 0));
        EXPECT_EQ(after.at(after.width() - 1, after.height() - 1, 2), before.at(before.width() - 1, before.height() - 1, 2));
        EXPECT_NE(after, before);
    }
}

TEST(Cli, OutputsAreByteIdenticalAcrossRunsAndJobCounts) {
    testing_support::TempDir tmp("cli");
    run_pipeline(tmp, tmp / "a", "1");
    run_pipeline(tmp, tmp / "b", "4");
    const auto files = tree(tmp / "a");
    ASSERT_EQ(files, tree(tmp / "b"));
    ASSERT_GE(files.size(), 4u);
    for (const auto& f : files) EXPECT_EQ(read_file(tmp / "a" / f), read_file(tmp / "b" / f)) << f;
}

TEST(Cli, StatsOfSwappedDataset) {
    testing_support::TempDir tmp("cli");
    run_pipeline(tmp, tmp / "run");
    const Outcome r = cli("stats --json --annotations " + q(tmp / "run" / "swapped" / "annotations.jsonl"), tmp);
    ASSERT_EQ(r.code, 0) << r.err;
    const Json j = Json::parse(r.out);
    EXPECT_EQ(j["images"], 2);
    EXPECT_EQ(j["faces"], 3);
    EXPECT_EQ(j["skipped"], 1);
    EXPECT_EQ(j["candidates"], 4);
    EXPECT_EQ(j["skipped_by_reason"]["too-small"], 1);
    EXPECT_EQ(j["faces_per_image"], Json::array({1, 2}));
}

TEST(Cli, EvalWidthBinsOnThreeRecords) {
    testing_support::TempDir tmp("cli");
    const Outcome r = cli("eval --bins width --annotations " + q(kFixtures / "eval_annotations.jsonl") + " --predictions " +
                          q(kFixtures / "eval_predictions.jsonl") + " --csv " + q(tmp / "e.csv"),
                      tmp);
    ASSERT_EQ(r.code, 0) << r.err;
    const auto rows = read_csv(tmp / "e.csv");
    ASSERT_EQ(rows.size(), 9u);
    EXPECT_EQ(rows[0], (std::vector<std::string>{"width_px", "count", "mean_error_deg"}));
    // Widths 30, 60 and 240 fall in the bins that start at those edges.
    auto deg = [](const Eigen::Vector3d& a, const Eigen::Vector3d& b) { return testing_support::angle_deg(a, b); };
    const std::map<std::string, std::pair<int, double>> expect{
        {"30-60", {1, deg(gaze_vec(0, 0), gaze_vec(3, 4))}},
        {"60-90", {1, deg(gaze_vec(10, -20), gaze_vec(10, -10))}},
        {">240", {1, 0.0}},
    };
    for (std::size_t i = 1; i < rows.size(); ++i) {
        const auto it = expect.find(rows[i][0]);
        if (it == expect.end()) {
            EXPECT_EQ(rows[i][1], "0") << rows[i][0];
            EXPECT_EQ(rows[i][2], "") << rows[i][0];
            continue;
        }
        EXPECT_EQ(std::stoi(rows[i][1]), it->second.first);
        EXPECT_NEAR(std::stod(rows[i][2]), it->second.second, 1e-3) << rows[i][0];
    }
    EXPECT_NE(r.out.find("records 3, outside bins 0"), std::string::npos);
}

TEST(Cli, GradcheckOnShippedInstances) {
    testing_support::TempDir tmp("cli");
    const Outcome r = cli("gradcheck --input " + q(kFixtures / "loss_instances.jsonl"), tmp);
    ASSERT_EQ(r.code, 0) << r.out << r.err;
    const auto pos = r.out.find("max relative error ");
    ASSERT_NE(pos, std::string::npos);
    EXPECT_LT(std::stod(r.out.substr(pos + 19)), 1e-4);
    for (const char* block : {"class", "box", "landmark", "gaze", "proj_F", "proj_T", "proj_S"})
        EXPECT_NE(r.out.find(block), std::string::npos) << block;
    EXPECT_EQ(cli("gradcheck --input " + q(kFixtures / "loss_instances.jsonl") + " --tolerance 1e-30", tmp).code, 1);
}

TEST(Cli, GsReportCsv) {
    testing_support::TempDir tmp("cli");
    const Outcome r = cli("gs-report --samples 500 --out-dir " + q(tmp.path()), tmp);
    ASSERT_EQ(r.code, 0) << r.err;
    const auto curve = read_csv(tmp / "gs_curve.csv");
    ASSERT_EQ(curve.size(), 40u);
    EXPECT_EQ(curve[0], (std::vector<std::string>{"x_over_r", "x_px", "gs"}));
    for (std::size_t i = 1; i < curve.size(); ++i) {
        const double x = std::stod(curve[i][1]);
        EXPECT_NEAR(std::stod(curve[i][2]), 100.0 / std::sqrt(100.0 * 100.0 - x * x), 1e-8) << x;
    }
    EXPECT_EQ(curve[20][2], "1");
    const auto planes = read_csv(tmp / "gs_planes.csv");
    ASSERT_EQ(planes.size(), 10u);
    EXPECT_EQ(planes[0], (std::vector<std::string>{"angle_deg", "front", "top", "side", "three_plane"}));
    EXPECT_EQ(planes[1][0], "5");
    EXPECT_EQ(planes[9][0], "85");
}

TEST(Cli, ConfigFileAndSeedAreReproducible) {
    testing_support::TempDir tmp("cli");
    {
        std::ofstream cfg(tmp / "run.ini");
        cfg << "seed=7\n[gs-report]\nsamples=300\nout-dir=" << (tmp / "a").string() << "\n";
    }
    ASSERT_EQ(cli("--config " + q(tmp / "run.ini") + " gs-report", tmp).code, 0);
    ASSERT_EQ(cli("gs-report --seed 7 --samples 300 --out-dir " + q(tmp / "b"), tmp).code, 0);
    ASSERT_EQ(cli("gs-report --seed 8 --samples 300 --out-dir " + q(tmp / "c"), tmp).code, 0);
    EXPECT_EQ(read_file(tmp / "a" / "gs_planes.csv"), read_file(tmp / "b" / "gs_planes.csv"));
    EXPECT_NE(read_file(tmp / "a" / "gs_planes.csv"), read_file(tmp / "c" / "gs_planes.csv"));
}

TEST(Cli, ToyfitReportsDescent) {
    testing_support::TempDir tmp("cli");
    const Outcome r = cli("toyfit --steps 300 --trace " + q(tmp / "t.csv"), tmp);
    ASSERT_EQ(r.code, 0) << r.err;
    const auto rows = read_csv(tmp / "t.csv");
    ASSERT_EQ(rows.size(), 302u);
    EXPECT_LT(std::stod(rows.back()[1]), std::stod(rows[1][1]));
}

TEST(Cli, ExitCodes) {
    testing_support::TempDir tmp("cli");
    const std::string attrs = q(kFixtures / "attributes.jsonl");
    EXPECT_NE(cli("", tmp).code, 0);
    EXPECT_NE(cli("match --attributes " + attrs + " --out " + q(tmp / "m") + " --bogus", tmp).code, 0);
    EXPECT_NE(cli("match --attributes " + q(tmp / "missing.jsonl") + " --out " + q(tmp / "m"), tmp).code, 0);

    {
        std::ofstream bad(tmp / "bad.jsonl");
        bad << read_file(kFixtures / "attributes.jsonl").substr(0, 40) << "\n";
    }
    Outcome r = cli("match --attributes " + q(tmp / "bad.jsonl") + " --out " + q(tmp / "m"), tmp);
    EXPECT_EQ(r.code, 2);
    EXPECT_NE(r.err.find("line 1"), std::string::npos) << r.err;
    EXPECT_FALSE(fs::exists(tmp / "m"));

    {
        std::ofstream bad(tmp / "pred.jsonl");
        bad << "{\"face_id\":\"q0\",\"gaze\":[1,2]}\n{\"face_id\":\"q1\",\"gaze\":[1]}\n";
    }
    r = cli("eval --annotations " + q(kFixtures / "eval_annotations.jsonl") + " --predictions " + q(tmp / "pred.jsonl"), tmp);
    EXPECT_EQ(r.code, 2);
    EXPECT_NE(r.err.find("line 2"), std::string::npos) << r.err;

    // A solver that may not iterate cannot converge.
    fs::create_directories(tmp / "run");
    ASSERT_EQ(cli("match --attributes " + attrs + " --faces " + q(kFixtures / "faces.jsonl") + " --out " + q(tmp / "run" / "m.jsonl"), tmp).code, 0);
    r = cli("swap --max-iterations 1 --faces " + q(kFixtures / "faces.jsonl") + " --matches " + q(tmp / "run" / "m.jsonl") +
                " --out-dir " + q(tmp / "run" / "out"),
            tmp);
    EXPECT_EQ(r.code, 3) << r.err;
}

TEST(Cli, AnnotateServesSwappedDataset) {
    testing_support::TempDir tmp("cli");
    run_pipeline(tmp, tmp / "run");
    const fs::path data = tmp / "run" / "swapped";
    fs::copy_file(data / "annotations.jsonl", data / "dataset.jsonl");

    int fds[2];
    ASSERT_EQ(pipe(fds), 0);
    const pid_t pid = fork();
    ASSERT_GE(pid, 0);
    if (pid == 0) {
        dup2(fds[1], STDOUT_FILENO);
        close(fds[0]);
        close(fds[1]);
        const std::string dir = data.string();
        execl(GAZESWAP_CLI, GAZESWAP_CLI, "annotate", "--port", "0", "--data-dir", dir.c_str(), static_cast<char*>(nullptr));
        _exit(127);
    }
    close(fds[1]);
    FILE* out = fdopen(fds[0], "r");
    char buf[512] = {0};
    ASSERT_NE(std::fgets(buf, sizeof buf, out), nullptr);
    const std::string line(buf);
    const auto colon = line.rfind(':');
    ASSERT_NE(colon, std::string::npos) << line;
    const int port = std::stoi(line.substr(colon + 1));

    httplib::Client client("127.0.0.1", port);
    auto images = client.Get("/images");
    ASSERT_TRUE(images);
    EXPECT_EQ(images->status, 200);
    const Json list = Json::parse(images->body);
    ASSERT_EQ(list.size(), 2u);
    auto face = client.Get("/faces/w2");
    ASSERT_TRUE(face);
    EXPECT_EQ(face->status, 200);
    auto crop = client.Get("/faces/w2/crop");
    ASSERT_TRUE(crop);
    EXPECT_EQ(crop->status, 200);
    EXPECT_EQ(decode_png(crop->body).width(), 224);
    const Json put{{"pitch", 3.0}, {"yaw", -4.0}, {"stage", "crop_adjusted"}, {"editor", "ana"}};
    EXPECT_EQ(client.Put("/faces/w2/gaze", put.dump(), "application/json")->status, 200);
    EXPECT_EQ(client.Get("/faces/w3")->status, 404);

    kill(pid, SIGTERM);
    int status = 0;
    waitpid(pid, &status, 0);
    std::fclose(out);
    EXPECT_TRUE(WIFEXITED(status));
    EXPECT_EQ(WEXITSTATUS(status), 0);
    const auto log = read_records<AnnotationRecord>(data / "annotations.log.jsonl");
    ASSERT_TRUE(log.ok());
    ASSERT_EQ(log.records.size(), 1u);
    EXPECT_EQ(log.records[0].face_id, "w2");
    EXPECT_EQ(log.records[0].stage, Stage::CropAdjusted);
}
