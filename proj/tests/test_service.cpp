#include <gtest/gtest.h>

#include <thread>

#include "maskmotion/service.hpp"
#include "support/tmpdir.hpp"
#include "support/toy.hpp"

using namespace maskmotion;
using namespace std::chrono_literals;

namespace {

std::shared_ptr<const Checkpoint> toy_checkpoint() {
    Denoiser<float> d(oracle::toy_denoiser());
    auto w = d.params().get("output", "w").mutable_data();
    for (std::size_t i = 0; i < w.size(); ++i) w[i] = 0.01f * static_cast<float>(static_cast<int>(i % 7) - 3);
    ScheduleConfig s;
    s.inference_steps = 4;
    return std::make_shared<const Checkpoint>(Checkpoint{std::move(d), s, CodecConfig{}, 11});
}

// Runs a JobService on an ephemeral local port for the test's lifetime.
class Running {
public:
    Running(const fs::path& home, std::shared_ptr<const Checkpoint> ck) : svc_(ServiceOptions{home, 1}, std::move(ck), nullptr) {
        port_ = svc_.bind_any_port();
        thread_ = std::thread([this] { svc_.listen_after_bind(); });
        svc_.server().wait_until_ready();
    }
    ~Running() {
        svc_.stop();
        thread_.join();
    }
    httplib::Client client() const {
        httplib::Client c("127.0.0.1", port_);
        c.set_read_timeout(30, 0);
        return c;
    }
    JobService& service() { return svc_; }

private:
    JobService svc_;
    int port_ = 0;
    std::thread thread_;
};

nlohmann::json payload(std::size_t frames = 4, std::uint64_t seed = 7) {
    auto clip = oracle::toy_clips(1, 2)[0];
    nlohmann::json masks = nlohmann::json::array();
    for (std::size_t k = 0; k < frames; ++k) masks.push_back(base64_encode(encode_pgm(clip.masks[k])));
    return {{"prompt", clip.prompt.text}, {"alpha", 0.2}, {"seed", seed}, {"frames", frames}, {"chunks", 1}, {"masks", masks}};
}

nlohmann::json poll_until_finished(httplib::Client& c, const std::string& id) {
    for (int i = 0; i < 600; ++i) {
        auto res = c.Get("/api/jobs/" + id);
        if (!res) break;
        auto j = nlohmann::json::parse(res->body);
        if (j["status"] == "done" || j["status"] == "failed") return j;
        std::this_thread::sleep_for(50ms);
    }
    ADD_FAILURE() << "job " << id << " did not finish";
    return {};
}

}  // namespace

TEST(Base64, RoundTripsAndRejectsGarbage) {
    for (std::string s : {std::string(""), std::string("a"), std::string("ab"), std::string("abc"), std::string("P5\n2 2\n255\n\0\xff\xff\0", 15)}) {
        EXPECT_EQ(base64_decode(base64_encode(s)), s);
    }
    EXPECT_EQ(base64_decode("aGVsbG8="), "hello");
    EXPECT_EQ(base64_decode("aGVsbG8"), "hello");
    EXPECT_THROW(base64_decode("a$=="), FormatError);
    EXPECT_THROW(base64_decode("abcde"), FormatError);
}

TEST(JobIds, SortableAndUnique) {
    auto a = make_job_id(1000, 0, 5), b = make_job_id(1000, 1, 5), c = make_job_id(1001, 0, 5);
    EXPECT_EQ(a.size(), 26u);
    EXPECT_LT(a, b);
    EXPECT_LT(b, c);
    EXPECT_EQ(a.find_first_not_of("0123456789ABCDEFGHJKMNPQRSTVWXYZ"), std::string::npos);
}

TEST(JobRecord, JsonRoundTrip) {
    Job j;
    j.id = "01ABC";
    j.status = JobStatus::done;
    j.result = "/tmp/x";
    j.frames = 8;
    auto back = Job::from_json(j.to_json());
    EXPECT_EQ(back.id, j.id);
    EXPECT_EQ(back.status, JobStatus::done);
    EXPECT_EQ(back.result, "/tmp/x");
    EXPECT_TRUE(j.to_json()["error"].is_null());
    EXPECT_THROW(parse_status("paused"), FormatError);
}

TEST(ParseRequest, ValidatesMasksAndNamesFrameIndex) {
    auto body = payload();
    auto req = parse_generate_request(body);
    EXPECT_EQ(req.masks.size(), 4u);
    EXPECT_EQ(req.seed, 7u);
    body["masks"][2] = base64_encode(std::string("P5\n1 1\n255\n\x07", 12));
    try {
        parse_generate_request(body);
        FAIL();
    } catch (const ValidationError& e) {
        EXPECT_NE(std::string(e.what()).find("mask frame 2"), std::string::npos) << e.what();
    }
    body = payload();
    body["masks"][1] = 12;
    EXPECT_THROW(parse_generate_request(body), ValidationError);
    body = payload();
    body.erase("prompt");
    EXPECT_THROW(parse_generate_request(body), ValidationError);
    body = payload();
    body["alpha"] = 2.0;
    EXPECT_THROW(parse_generate_request(body), ValidationError);
}

TEST(Service, GenerateLifecycleOverHttp) {
    oracle::TempDir home;
    Running svc(home.path(), toy_checkpoint());
    auto c = svc.client();

    auto health = c.Get("/api/health");
    ASSERT_TRUE(health);
    EXPECT_EQ(health->status, 200);
    EXPECT_EQ(nlohmann::json::parse(health->body)["ok"], true);

    auto post = c.Post("/api/jobs/generate", payload().dump(), "application/json");
    ASSERT_TRUE(post);
    ASSERT_EQ(post->status, 202) << post->body;
    const auto id = nlohmann::json::parse(post->body)["job_id"].get<std::string>();
    auto job = poll_until_finished(c, id);
    ASSERT_EQ(job["status"], "done") << job.dump();
    EXPECT_EQ(job["frames"], 4);
    EXPECT_EQ(job["request"]["seed"], 7);
    EXPECT_FALSE(job["request"].contains("masks"));

    auto frame0 = c.Get("/api/jobs/" + id + "/frames/0");
    ASSERT_TRUE(frame0);
    EXPECT_EQ(frame0->status, 200);
    EXPECT_EQ(frame0->get_header_value("Content-Type"), "image/x-portable-pixmap");
    const auto req = parse_generate_request(payload());
    EXPECT_EQ(frame0->body, encode_ppm(RendererProvider{}.generate(req.masks[0], req.prompt, 7)));

    auto report = c.Get("/api/jobs/" + id + "/report");
    ASSERT_TRUE(report);
    EXPECT_EQ(report->status, 200);
    EXPECT_TRUE(nlohmann::json::parse(report->body)["aggregate"].contains("iou_mean"));

    EXPECT_EQ(c.Get("/api/jobs/" + id + "/frames/4")->status, 404);
    EXPECT_EQ(c.Get("/api/jobs/0000000000ZZZZZZZZZZZZZZZZ")->status, 404);
    EXPECT_EQ(c.Get("/api/jobs/0000000000ZZZZZZZZZZZZZZZZ/frames/0")->status, 404);
}

TEST(Service, SamePayloadGivesIdenticalFrames) {
    oracle::TempDir home;
    Running svc(home.path(), toy_checkpoint());
    auto c = svc.client();
    std::vector<std::string> ids;
    for (int i = 0; i < 2; ++i) ids.push_back(nlohmann::json::parse(c.Post("/api/jobs/generate", payload().dump(), "application/json")->body)["job_id"]);
    EXPECT_NE(ids[0], ids[1]);
    EXPECT_LT(ids[0], ids[1]);
    for (const auto& id : ids) ASSERT_EQ(poll_until_finished(c, id)["status"], "done");
    for (int k = 0; k < 4; ++k) {
        const auto path = "/frames/" + std::to_string(k);
        EXPECT_EQ(c.Get("/api/jobs/" + ids[0] + path)->body, c.Get("/api/jobs/" + ids[1] + path)->body) << k;
    }
}

TEST(Service, RejectsBadRequests) {
    oracle::TempDir home;
    Running svc(home.path(), toy_checkpoint());
    auto c = svc.client();
    auto body = payload();
    body["masks"][3] = base64_encode(std::string("P5\n2 1\n255\n\x00\x07", 13));
    auto res = c.Post("/api/jobs/generate", body.dump(), "application/json");
    ASSERT_TRUE(res);
    EXPECT_EQ(res->status, 400);
    EXPECT_NE(res->body.find("mask frame 3"), std::string::npos) << res->body;

    EXPECT_EQ(c.Post("/api/jobs/generate", "{not json", "application/json")->status, 400);

    // masks valid but the wrong size for the checkpoint's latent grid
    auto clip = synth_dataset(Pattern::translate, 1, 1)[0];
    body = payload();
    for (std::size_t k = 0; k < 4; ++k) body["masks"][k] = base64_encode(encode_pgm(clip.masks[k]));
    res = c.Post("/api/jobs/generate", body.dump(), "application/json");
    EXPECT_EQ(res->status, 400);
    EXPECT_NE(res->body.find("checkpoint expects 16x16"), std::string::npos) << res->body;

    auto pre = c.Options("/api/jobs/generate");
    ASSERT_TRUE(pre);
    EXPECT_EQ(pre->status, 204);
    EXPECT_EQ(pre->get_header_value("Access-Control-Allow-Origin"), "*");
}

TEST(Service, NotDoneIsConflict) {
    oracle::TempDir home;
    // A long job keeps the single worker busy so the second one stays queued.
    Running svc(home.path(), toy_checkpoint());
    auto c = svc.client();
    auto slow = payload();
    slow["steps"] = 100;
    slow["frames"] = 4;
    const std::string first = nlohmann::json::parse(c.Post("/api/jobs/generate", slow.dump(), "application/json")->body)["job_id"];
    const std::string second = nlohmann::json::parse(c.Post("/api/jobs/generate", payload().dump(), "application/json")->body)["job_id"];
    auto res = c.Get("/api/jobs/" + second + "/frames/0");
    EXPECT_EQ(res->status, 409);
    EXPECT_EQ(c.Get("/api/jobs/" + second + "/report")->status, 409);
    EXPECT_EQ(nlohmann::json::parse(c.Get("/api/jobs/" + second)->body)["status"], "queued");
    // health is answered while the worker is busy
    EXPECT_EQ(c.Get("/api/health")->status, 200);
    EXPECT_EQ(poll_until_finished(c, first)["status"], "done");
    EXPECT_EQ(poll_until_finished(c, second)["status"], "done");
}

TEST(Service, NoCheckpointIsUnavailable) {
    oracle::TempDir home;
    Running svc(home.path(), nullptr);
    auto c = svc.client();
    EXPECT_EQ(c.Post("/api/jobs/generate", payload().dump(), "application/json")->status, 503);
    auto health = nlohmann::json::parse(c.Get("/api/health")->body);
    EXPECT_EQ(health["ok"], false);
    EXPECT_TRUE(health["checkpoint_id"].is_null());
}

TEST(Service, CompletedJobsSurviveRestart) {
    oracle::TempDir home;
    std::string id, frame;
    {
        Running svc(home.path(), toy_checkpoint());
        auto c = svc.client();
        id = nlohmann::json::parse(c.Post("/api/jobs/generate", payload().dump(), "application/json")->body)["job_id"];
        ASSERT_EQ(poll_until_finished(c, id)["status"], "done");
        frame = c.Get("/api/jobs/" + id + "/frames/2")->body;
    }
    // a job left "running" by a crash is reported as failed after restart
    Job stuck;
    stuck.id = "00000000000000000000000001";
    stuck.status = JobStatus::running;
    fs::create_directories(home / "jobs" / stuck.id);
    write_json_file(home / "jobs" / stuck.id / "job.json", stuck.to_json());

    Running again(home.path(), toy_checkpoint());
    auto c = again.client();
    auto job = nlohmann::json::parse(c.Get("/api/jobs/" + id)->body);
    EXPECT_EQ(job["status"], "done");
    EXPECT_EQ(c.Get("/api/jobs/" + id + "/frames/2")->body, frame);
    auto failed = nlohmann::json::parse(c.Get("/api/jobs/" + stuck.id)->body);
    EXPECT_EQ(failed["status"], "failed");
    EXPECT_FALSE(failed["error"].is_null());
}

TEST(Service, QueuedJobsResumeAfterRestart) {
    oracle::TempDir home;
    const auto req = parse_generate_request(payload());
    std::string id;
    {
        JobService svc(ServiceOptions{home.path(), 1}, nullptr, nullptr);
        id = svc.submit(req);  // no checkpoint: the worker fails it
        auto job = svc.wait(id, 10s);
        ASSERT_TRUE(job);
        EXPECT_EQ(job->status, JobStatus::failed);
    }
    // re-queue by hand and restart with a checkpoint
    auto job = Job::from_json(read_json_file(home / "jobs" / id / "job.json"));
    job.status = JobStatus::queued;
    job.error.clear();
    write_json_file(home / "jobs" / id / "job.json", job.to_json());
    JobService svc(ServiceOptions{home.path(), 1}, toy_checkpoint(), nullptr);
    auto done = svc.wait(id, 30s);
    ASSERT_TRUE(done);
    EXPECT_EQ(done->status, JobStatus::done);
    EXPECT_TRUE(fs::exists(fs::path(done->result) / "frame_0004.ppm"));
}

TEST(Service, HomeFromEnvironment) {
    ::setenv("MASKMOTION_HOME", "/tmp/mm_home_probe", 1);
    EXPECT_EQ(default_home(), fs::path("/tmp/mm_home_probe"));
    ::unsetenv("MASKMOTION_HOME");
    EXPECT_EQ(default_home(), fs::path("maskmotion_home"));
}
