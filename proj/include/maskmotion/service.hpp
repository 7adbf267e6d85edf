#pragma once

// HTTP job service.
//   POST /api/jobs/generate          -> 202 {job_id}
//   GET  /api/jobs/{id}              -> job record
//   GET  /api/jobs/{id}/frames/{k}   -> P6 bytes
//   GET  /api/jobs/{id}/report       -> metrics JSON
//   GET  /api/health                 -> {ok, checkpoint_id}
// Jobs live under <home>/jobs/<id>/ (job.json, request.json, frames/,
// report.json) and are reloaded on restart.

#include <algorithm>
#include <chrono>
#include <condition_variable>
#include <deque>
#include <filesystem>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <thread>
#include <vector>

#include <httplib.h>
#include <json.hpp>

#include "maskmotion/checkpoint.hpp"
#include "maskmotion/dataio.hpp"
#include "maskmotion/metrics.hpp"
#include "maskmotion/pipeline.hpp"

namespace maskmotion {

/// RFC 4648 base64 with optional padding; whitespace is not accepted.
inline std::string base64_decode(std::string_view in) {
    auto value = [](char c) -> int {
        if (c >= 'A' && c <= 'Z') return c - 'A';
        if (c >= 'a' && c <= 'z') return c - 'a' + 26;
        if (c >= '0' && c <= '9') return c - '0' + 52;
        if (c == '+') return 62;
        if (c == '/') return 63;
        return -1;
    };
    while (!in.empty() && in.back() == '=') in.remove_suffix(1);
    if (in.size() % 4 == 1) throw FormatError("base64: invalid length");
    std::string out;
    out.reserve(in.size() * 3 / 4);
    std::uint32_t acc = 0;
    int bits = 0;
    for (char c : in) {
        const int v = value(c);
        if (v < 0) throw FormatError("base64: invalid character");
        acc = (acc << 6) | static_cast<std::uint32_t>(v);
        bits += 6;
        if (bits >= 8) {
            bits -= 8;
            out.push_back(static_cast<char>((acc >> bits) & 0xFFu));
        }
    }
    return out;
}

inline std::string base64_encode(std::string_view in) { return httplib::detail::base64_encode(std::string(in)); }

enum class JobStatus { queued, running, done, failed };

inline std::string_view status_name(JobStatus s) {
    switch (s) {
        case JobStatus::queued: return "queued";
        case JobStatus::running: return "running";
        case JobStatus::done: return "done";
        case JobStatus::failed: return "failed";
    }
    return "?";
}

inline JobStatus parse_status(std::string_view s) {
    if (s == "queued") return JobStatus::queued;
    if (s == "running") return JobStatus::running;
    if (s == "done") return JobStatus::done;
    if (s == "failed") return JobStatus::failed;
    throw FormatError("unknown job status '" + std::string(s) + "'");
}

struct Job {
    std::string id;
    std::string kind = "generate";
    JobStatus status = JobStatus::queued;
    std::string result;  // frames directory, set iff done
    std::string error;
    std::size_t frames = 0;

    nlohmann::json to_json() const {
        nlohmann::json j{{"id", id}, {"kind", kind}, {"status", status_name(status)}, {"frames", frames}};
        j["result"] = result.empty() ? nlohmann::json(nullptr) : nlohmann::json(result);
        j["error"] = error.empty() ? nlohmann::json(nullptr) : nlohmann::json(error);
        return j;
    }

    static Job from_json(const nlohmann::json& j) {
        Job job;
        job.id = j.at("id").get<std::string>();
        job.kind = j.at("kind").get<std::string>();
        job.status = parse_status(j.at("status").get<std::string>());
        job.frames = j.value("frames", std::size_t{0});
        if (!j.at("result").is_null()) job.result = j.at("result").get<std::string>();
        if (!j.at("error").is_null()) job.error = j.at("error").get<std::string>();
        return job;
    }
};

/// 26-character sortable id: 10 Crockford base32 digits of milliseconds,
/// then 16 digits of a per-process sequence mixed with a content hash.
inline std::string make_job_id(std::uint64_t millis, std::uint64_t sequence, std::uint64_t salt) {
    static constexpr char kAlphabet[] = "0123456789ABCDEFGHJKMNPQRSTVWXYZ";
    std::string id(26, '0');
    for (int i = 9; i >= 0; --i) {
        id[static_cast<std::size_t>(i)] = kAlphabet[millis & 31u];
        millis >>= 5;
    }
    // sequence in the high digits keeps ids from one millisecond ordered
    const std::uint64_t hi = sequence, lo = fnv1a64(std::to_string(salt) + ":" + std::to_string(sequence));
    for (int i = 0; i < 6; ++i) id[static_cast<std::size_t>(15 - i)] = kAlphabet[(hi >> (5 * i)) & 31u];
    for (int i = 0; i < 10; ++i) id[static_cast<std::size_t>(25 - i)] = kAlphabet[(lo >> (5 * i)) & 31u];
    return id;
}

/// Parsed body of POST /api/jobs/generate. Throws ValidationError with a
/// message suitable for a 400 response.
inline GenerationRequest parse_generate_request(const nlohmann::json& body) {
    if (!body.is_object()) throw ValidationError("request body must be a JSON object");
    GenerationRequest req;
    try {
        req.prompt = parse_prompt(body.at("prompt").get<std::string>());
        req.alpha = body.value("alpha", 0.2);
        req.seed = body.value("seed", std::uint64_t{0});
        req.frames = body.value("frames", std::size_t{8});
        req.chunks = body.value("chunks", std::size_t{1});
        req.inference_steps = body.value("steps", std::size_t{0});
        const auto& masks = body.at("masks");
        if (!masks.is_array() || masks.empty()) throw ValidationError("masks must be a non-empty array of base64 P5 images");
        std::vector<Mask> frames;
        for (std::size_t k = 0; k < masks.size(); ++k) {
            try {
                frames.push_back(decode_pgm_mask(base64_decode(masks[k].get<std::string>()), "mask frame " + std::to_string(k)));
            } catch (const nlohmann::json::exception&) {
                throw ValidationError("mask frame " + std::to_string(k) + ": expected a base64 string");
            } catch (const FormatError& e) {
                const std::string what = e.what();
                throw ValidationError(what.rfind("mask frame", 0) == 0 ? what : "mask frame " + std::to_string(k) + ": " + what);
            }
        }
        for (std::size_t k = 1; k < frames.size(); ++k) {
            if (!frames[k].same_shape(frames[0])) throw ValidationError("mask frame " + std::to_string(k) + ": size differs from frame 0");
        }
        req.masks = MaskSequence(std::move(frames));
    } catch (const nlohmann::json::exception& e) {
        throw ValidationError(std::string("malformed request: ") + e.what());
    }
    req.validate();
    return req;
}

inline nlohmann::json request_to_json(const GenerationRequest& req) {
    nlohmann::json masks = nlohmann::json::array();
    for (const auto& m : req.masks) masks.push_back(base64_encode(encode_pgm(m)));
    return {{"prompt", req.prompt.text}, {"alpha", req.alpha},   {"seed", req.seed},
            {"frames", req.frames},      {"chunks", req.chunks}, {"steps", req.inference_steps}, {"masks", masks}};
}

struct ServiceOptions {
    fs::path home = "maskmotion_home";
    std::size_t workers = 1;
};

inline fs::path default_home() {
    if (const char* env = std::getenv("MASKMOTION_HOME"); env && *env) return env;
    return "maskmotion_home";
}

class JobService {
public:
    JobService(ServiceOptions opts, std::shared_ptr<const Checkpoint> ck, std::shared_ptr<const FirstFrameProvider> provider)
        : opts_(std::move(opts)), ck_(std::move(ck)), provider_(provider ? std::move(provider) : std::make_shared<RendererProvider>()) {
        if (opts_.workers < 1) throw ValidationError("worker count must be at least 1");
        if (ck_) ck_id_ = checkpoint_id(*ck_);
        fs::create_directories(jobs_dir());
        reload();
        routes();
        for (std::size_t i = 0; i < opts_.workers; ++i) workers_.emplace_back([this] { work(); });
    }

    ~JobService() { stop(); }

    JobService(const JobService&) = delete;
    JobService& operator=(const JobService&) = delete;

    httplib::Server& server() { return http_; }

    /// Binds and serves on the calling thread until stop().
    bool listen(const std::string& host, int port) { return http_.listen(host, port); }

    int bind_any_port(const std::string& host = "127.0.0.1") { return http_.bind_to_any_port(host); }
    bool listen_after_bind() { return http_.listen_after_bind(); }

    void stop() {
        http_.stop();
        {
            std::lock_guard lock(mu_);
            if (stopping_) return;
            stopping_ = true;
        }
        cv_.notify_all();
        for (auto& w : workers_) {
            if (w.joinable()) w.join();
        }
    }

    std::optional<Job> job(const std::string& id) const {
        std::lock_guard lock(mu_);
        auto it = jobs_.find(id);
        if (it == jobs_.end()) return std::nullopt;
        return it->second;
    }

    /// Queues a validated request; returns the job id.
    std::string submit(const GenerationRequest& req) {
        std::lock_guard lock(mu_);
        const auto now = static_cast<std::uint64_t>(
            std::chrono::duration_cast<std::chrono::milliseconds>(std::chrono::system_clock::now().time_since_epoch()).count());
        std::string id;
        do {
            id = make_job_id(std::max(now, last_millis_), sequence_++, fnv1a64(request_to_json(req).dump()));
        } while (jobs_.count(id));
        last_millis_ = std::max(now, last_millis_);
        Job job;
        job.id = id;
        job.frames = req.output_frames();
        fs::create_directories(jobs_dir() / id);
        write_json_file(jobs_dir() / id / "request.json", request_to_json(req));
        persist(job);
        jobs_[id] = job;
        queue_.push_back(id);
        cv_.notify_one();
        return id;
    }

    /// Blocks until the job leaves queued/running or the timeout passes.
    std::optional<Job> wait(const std::string& id, std::chrono::milliseconds timeout) {
        std::unique_lock lock(mu_);
        done_cv_.wait_for(lock, timeout, [&] {
            auto it = jobs_.find(id);
            return it == jobs_.end() || it->second.status == JobStatus::done || it->second.status == JobStatus::failed;
        });
        auto it = jobs_.find(id);
        if (it == jobs_.end()) return std::nullopt;
        return it->second;
    }

private:
    fs::path jobs_dir() const { return opts_.home / "jobs"; }

    void persist(const Job& job) const { write_json_file(jobs_dir() / job.id / "job.json", job.to_json()); }

    void reload() {
        std::vector<std::string> pending;
        for (const auto& entry : fs::directory_iterator(jobs_dir())) {
            const auto file = entry.path() / "job.json";
            if (!entry.is_directory() || !fs::exists(file)) continue;
            try {
                auto job = Job::from_json(read_json_file(file));
                if (job.status == JobStatus::running) {
                    job.status = JobStatus::failed;
                    job.error = "interrupted by service restart";
                    persist(job);
                }
                if (job.status == JobStatus::queued) pending.push_back(job.id);
                jobs_[job.id] = job;
            } catch (const std::exception& e) {
                warn("skipping unreadable job record " + file.string() + ": " + e.what());
            }
        }
        std::sort(pending.begin(), pending.end());
        for (auto& id : pending) queue_.push_back(std::move(id));
    }

    void set_status(const std::string& id, JobStatus status, const std::string& result = {}, const std::string& error = {}) {
        std::lock_guard lock(mu_);
        auto& job = jobs_.at(id);
        job.status = status;
        job.result = result;
        job.error = error;
        persist(job);
        if (status == JobStatus::done || status == JobStatus::failed) done_cv_.notify_all();
    }

    void work() {
        for (;;) {
            std::string id;
            {
                std::unique_lock lock(mu_);
                cv_.wait(lock, [&] { return stopping_ || !queue_.empty(); });
                if (stopping_) return;
                id = queue_.front();
                queue_.pop_front();
            }
            set_status(id, JobStatus::running);
            try {
                if (!ck_) throw Error("no checkpoint loaded");
                const auto dir = jobs_dir() / id;
                const auto req = parse_generate_request(read_json_file(dir / "request.json"));
                const auto video = generate_long(req, *ck_, *provider_);
                save_generated(video, dir / "frames");
                const auto window = req.masks.window(0, video.frames.size());
                auto report = evaluation_report({{id, score_video(video.frames, window, req.prompt)}});
                write_json_file(dir / "report.json", report);
                set_status(id, JobStatus::done, (dir / "frames").string());
            } catch (const std::exception& e) {
                set_status(id, JobStatus::failed, {}, e.what());
            }
        }
    }

    static void send_json(httplib::Response& res, int status, const nlohmann::json& body) {
        res.status = status;
        res.set_content(body.dump(), "application/json");
    }

    static void send_error(httplib::Response& res, int status, const std::string& message) { send_json(res, status, {{"error", message}}); }

    void routes() {
        // the mask editor may be served from another origin
        http_.set_default_headers({{"Access-Control-Allow-Origin", "*"}});
        http_.Options(R"(/api/.*)", [](const httplib::Request&, httplib::Response& res) {
            res.status = 204;
            res.set_header("Access-Control-Allow-Methods", "GET, POST, OPTIONS");
            res.set_header("Access-Control-Allow-Headers", "Content-Type");
        });

        http_.Get("/api/health", [this](const httplib::Request&, httplib::Response& res) {
            send_json(res, 200, {{"ok", ck_ != nullptr}, {"checkpoint_id", ck_ ? nlohmann::json(ck_id_) : nlohmann::json(nullptr)}});
        });

        http_.Post("/api/jobs/generate", [this](const httplib::Request& req, httplib::Response& res) {
            if (!ck_) return send_error(res, 503, "no checkpoint loaded");
            nlohmann::json body;
            try {
                body = nlohmann::json::parse(req.body);
            } catch (const nlohmann::json::exception& e) {
                return send_error(res, 400, std::string("malformed JSON: ") + e.what());
            }
            try {
                const auto parsed = parse_generate_request(body);
                const auto& cfg = ck_->model.config();
                const auto p = static_cast<int>(ck_->codec.patch);
                if (parsed.masks.height() != static_cast<int>(cfg.latent_h) * p || parsed.masks.width() != static_cast<int>(cfg.latent_w) * p) {
                    throw ValidationError("masks are " + std::to_string(parsed.masks.width()) + "x" + std::to_string(parsed.masks.height()) +
                                          ", checkpoint expects " + std::to_string(cfg.latent_w * p) + "x" + std::to_string(cfg.latent_h * p));
                }
                send_json(res, 202, {{"job_id", submit(parsed)}});
            } catch (const ValidationError& e) {
                send_error(res, 400, e.what());
            }
        });

        http_.Get(R"(/api/jobs/([0-9A-Z]+))", [this](const httplib::Request& req, httplib::Response& res) {
            auto job = this->job(req.matches[1]);
            if (!job) return send_error(res, 404, "unknown job " + std::string(req.matches[1]));
            auto body = job->to_json();
            const auto request_file = jobs_dir() / job->id / "request.json";
            if (fs::exists(request_file)) {
                auto request = read_json_file(request_file);
                request.erase("masks");
                body["request"] = request;
            }
            send_json(res, 200, body);
        });

        http_.Get(R"(/api/jobs/([0-9A-Z]+)/frames/(\d+))", [this](const httplib::Request& req, httplib::Response& res) {
            auto job = this->job(req.matches[1]);
            if (!job) return send_error(res, 404, "unknown job " + std::string(req.matches[1]));
            if (job->status != JobStatus::done) return send_error(res, 409, "job is " + std::string(status_name(job->status)));
            const auto k = std::stoull(req.matches[2]);
            if (k >= job->frames) return send_error(res, 404, "frame " + std::to_string(k) + " out of range");
            res.status = 200;
            res.set_content(read_file_bytes((fs::path(job->result) / frame_file_name(k + 1, "ppm")).string()), "image/x-portable-pixmap");
        });

        http_.Get(R"(/api/jobs/([0-9A-Z]+)/report)", [this](const httplib::Request& req, httplib::Response& res) {
            auto job = this->job(req.matches[1]);
            if (!job) return send_error(res, 404, "unknown job " + std::string(req.matches[1]));
            if (job->status != JobStatus::done) return send_error(res, 409, "job is " + std::string(status_name(job->status)));
            send_json(res, 200, read_json_file(jobs_dir() / job->id / "report.json"));
        });

        http_.set_exception_handler([](const httplib::Request&, httplib::Response& res, std::exception_ptr ep) {
            try {
                std::rethrow_exception(ep);
            } catch (const std::exception& e) {
                send_error(res, 500, e.what());
            } catch (...) {
                send_error(res, 500, "unknown error");
            }
        });
    }

    ServiceOptions opts_;
    std::shared_ptr<const Checkpoint> ck_;
    std::shared_ptr<const FirstFrameProvider> provider_;
    std::string ck_id_;
    httplib::Server http_;

    mutable std::mutex mu_;
    std::condition_variable cv_;
    std::condition_variable done_cv_;
    std::map<std::string, Job> jobs_;
    std::deque<std::string> queue_;
    std::vector<std::thread> workers_;
    bool stopping_ = false;
    std::uint64_t sequence_ = 0;
    std::uint64_t last_millis_ = 0;
};

}  // namespace maskmotion
