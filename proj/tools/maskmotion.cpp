// maskmotion command-line driver.
// Exit codes: 0 success, 1 validation error, 2 runtime failure.

#include <csignal>
#include <iostream>
#include <memory>
#include <string>

#include <CLI11.hpp>

#include "maskmotion/maskmotion.hpp"
#include "maskmotion/service.hpp"

namespace mm = maskmotion;

namespace {

struct DatasetArgs {
    std::string pattern = "translate";
    std::size_t count = 5;
    std::uint64_t seed = 0;
    std::string out;
    mm::Geometry geometry;
};

struct TrainArgs {
    std::string data;
    std::string out;
    std::size_t steps = 2000;
    double lr = 3.0e-5;
    std::string lr_schedule = "constant";
    std::string policy = "all";
    std::uint64_t seed = 0;
    std::size_t batch = 1;
    std::size_t log_every = 50;
    double beta_end = 0.02;
    std::size_t inference_steps = 20;
    std::size_t channels = mm::DenoiserConfig{}.model_channels;
    std::size_t heads = mm::DenoiserConfig{}.heads;
    std::size_t blocks = mm::DenoiserConfig{}.blocks;
    bool no_mask_attention = false;
    bool separate_mask_projection = false;
    bool mask_detail = false;
    bool first_frame_model = false;
    std::string resume;
    std::string init;
};

struct GenerateArgs {
    std::string ckpt;
    std::string masks;
    std::string prompt;
    double alpha = 0.2;
    std::size_t frames = 8;
    std::size_t chunks = 1;
    std::uint64_t seed = 0;
    std::size_t steps = 0;
    std::string out;
    std::string first_frame_ckpt;
};

struct EvalArgs {
    std::string video;
    std::string masks;
    std::string prompt;
    std::string report;
    bool median_background = false;
};

struct ServeArgs {
    std::string addr = "127.0.0.1:8080";
    std::string ckpt;
    std::string first_frame_ckpt;
    std::string home;
    std::size_t workers = 1;
};

std::uint32_t to_micro(double beta) {
    if (!(beta > 0 && beta < 1)) throw mm::ValidationError("beta must be in (0,1)");
    return static_cast<std::uint32_t>(std::llround(beta * 1e6));
}

int make_dataset(const DatasetArgs& a) {
    const auto clips = mm::synth_dataset(mm::parse_pattern(a.pattern), a.count, a.seed, a.geometry);
    mm::save_dataset(clips, a.out,
                     {{"pattern", a.pattern},
                      {"seed", a.seed},
                      {"geometry",
                       {{"height", a.geometry.height},
                        {"width", a.geometry.width},
                        {"frames", a.geometry.frames},
                        {"radius", a.geometry.radius},
                        {"speed", a.geometry.speed},
                        {"scale_rate", a.geometry.scale_rate}}}});
    std::cout << "wrote " << clips.size() << " clips (" << clips[0].prompt.text << ") to " << a.out << "\n";
    return 0;
}

int train(const TrainArgs& a) {
    const auto clips = mm::load_dataset(a.data);
    mm::TrainConfig cfg;
    cfg.lr = a.lr;
    cfg.lr_schedule = mm::parse_lr_schedule(a.lr_schedule);
    cfg.steps = a.steps;
    cfg.batch_size = a.batch;
    cfg.policy = mm::parse_policy(a.policy);
    cfg.seed = a.seed;
    cfg.log_every = a.log_every;
    cfg.schedule.beta_end_micro = to_micro(a.beta_end);
    cfg.schedule.inference_steps = a.inference_steps;

    mm::CodecConfig codec;
    std::uint64_t vocab_seed = 11;
    std::optional<mm::Denoiser<float>> model;
    if (!a.init.empty()) {
        auto ck = mm::load_checkpoint(a.init);
        if (ck.schedule != cfg.schedule) throw mm::ValidationError("--init checkpoint was trained with a different schedule");
        codec = ck.codec;
        vocab_seed = ck.vocab_seed;
        model.emplace(std::move(ck.model));
    } else {
        mm::DenoiserConfig dc;
        dc.latent_h = static_cast<std::size_t>(clips[0].frames[0].height) / codec.patch;
        dc.latent_w = static_cast<std::size_t>(clips[0].frames[0].width) / codec.patch;
        dc.latent_channels = codec.latent_channels();
        dc.model_channels = a.channels;
        dc.heads = a.heads;
        dc.blocks = a.blocks;
        dc.mlp_hidden = 2 * a.channels;
        dc.max_timestep = cfg.schedule.steps;
        dc.use_mask_attention = !a.no_mask_attention;
        dc.separate_mask_projection = a.separate_mask_projection;
        dc.mask_patch_detail = a.mask_detail;
        dc.mask_input_channels = a.first_frame_model ? 1 : 0;
        model.emplace(dc);
    }
    mm::TrainState state;
    if (!a.resume.empty()) state = mm::load_train_state(a.resume);
    auto res = mm::train_few_shot(clips, std::move(*model), cfg, std::move(state), codec, vocab_seed, [&](std::size_t step, double loss) {
        if (step % a.log_every == 0) std::cout << "step " << step << " loss " << loss << "\n";
    });
    mm::save_checkpoint(res.checkpoint, a.out);
    mm::write_json_file(a.out + ".manifest.json", res.manifest);
    mm::save_train_state(res.state, a.out + ".state");
    std::cout << "checkpoint " << res.manifest["checkpoint_id"].get<std::string>() << " written to " << a.out << "\n";
    return 0;
}

std::shared_ptr<const mm::FirstFrameProvider> provider_for(const std::string& ff_ckpt) {
    if (ff_ckpt.empty()) return std::make_shared<mm::RendererProvider>();
    return std::make_shared<mm::DiffusionProvider>(mm::load_checkpoint(ff_ckpt));
}

int generate(const GenerateArgs& a) {
    const auto ck = mm::load_checkpoint(a.ckpt);
    mm::GenerationRequest req;
    req.prompt = mm::parse_prompt(a.prompt);
    req.masks = mm::load_mask_sequence(a.masks);
    req.seed = a.seed;
    req.alpha = a.alpha;
    req.frames = a.frames;
    req.chunks = a.chunks;
    req.inference_steps = a.steps;
    const auto video = mm::generate_long(req, ck, *provider_for(a.first_frame_ckpt));
    mm::save_generated(video, a.out);
    std::cout << "wrote " << video.frames.size() << " frames to " << a.out << "\n";
    return 0;
}

int evaluate(const EvalArgs& a) {
    const auto video = mm::load_video(a.video);
    const auto masks = mm::load_mask_sequence(a.masks);
    const auto prompt = mm::parse_prompt(a.prompt);
    if (masks.size() < video.size()) {
        throw mm::ValidationError(std::to_string(video.size()) + " frames but only " + std::to_string(masks.size()) + " masks");
    }
    const auto window = masks.window(0, video.size());
    mm::VideoScore score;
    if (a.median_background) {
        const auto bg = mm::estimate_background(video);
        score = mm::score_video(video, window, prompt);
        score.iou_mean = 0;
        score.iou_per_frame.clear();
        for (std::size_t i = 0; i < video.size(); ++i) {
            score.iou_per_frame.push_back(mm::iou(mm::extract_foreground(video[i], bg), window[i]));
            score.iou_mean += score.iou_per_frame.back() / static_cast<double>(video.size());
        }
    } else {
        score = mm::score_video(video, window, prompt);
    }
    const auto report = mm::evaluation_report({{a.video, score}});
    mm::write_json_file(a.report, report);
    std::cout << "iou_mean " << score.iou_mean << " consistency " << score.consistency << " alignment " << score.alignment << "\n";
    return 0;
}

mm::JobService* g_service = nullptr;

int serve(const ServeArgs& a) {
    const auto colon = a.addr.rfind(':');
    if (colon == std::string::npos) throw mm::ValidationError("--addr must be HOST:PORT");
    const auto host = a.addr.substr(0, colon);
    int port = 0;
    try {
        port = std::stoi(a.addr.substr(colon + 1));
    } catch (const std::exception&) {
        throw mm::ValidationError("--addr has a non-numeric port");
    }
    std::shared_ptr<const mm::Checkpoint> ck;
    if (!a.ckpt.empty()) ck = std::make_shared<const mm::Checkpoint>(mm::load_checkpoint(a.ckpt));
    mm::ServiceOptions opts;
    opts.home = a.home.empty() ? mm::default_home() : mm::fs::path(a.home);
    opts.workers = a.workers;
    mm::JobService service(opts, ck, provider_for(a.first_frame_ckpt));
    g_service = &service;
    std::signal(SIGINT, [](int) {
        if (g_service) g_service->server().stop();
    });
    std::signal(SIGTERM, [](int) {
        if (g_service) g_service->server().stop();
    });
    std::cout << "listening on " << host << ":" << port << " (home " << opts.home.string() << ")" << std::endl;
    if (!service.listen(host, port)) throw mm::Error("cannot listen on " + a.addr);
    g_service = nullptr;
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Mask-guided toy video diffusion"};
    app.require_subcommand(1);

    DatasetArgs ds;
    auto* c_ds = app.add_subcommand("make-dataset", "Render a synthetic few-shot dataset");
    c_ds->add_option("--pattern", ds.pattern, "translate|scale|multi")->required();
    c_ds->add_option("--count", ds.count, "Number of clips")->capture_default_str();
    c_ds->add_option("--seed", ds.seed)->capture_default_str();
    c_ds->add_option("--out", ds.out, "Output directory")->required();
    c_ds->add_option("--size", ds.geometry.height, "Frame height and width")->capture_default_str()->each([&](const std::string&) {
        ds.geometry.width = ds.geometry.height;
    });
    c_ds->add_option("--frames", ds.geometry.frames)->capture_default_str();
    c_ds->add_option("--radius", ds.geometry.radius)->capture_default_str();
    c_ds->add_option("--speed", ds.geometry.speed)->capture_default_str();
    c_ds->add_option("--scale-rate", ds.geometry.scale_rate)->capture_default_str();

    TrainArgs tr;
    auto* c_tr = app.add_subcommand("train", "Few-shot training");
    c_tr->add_option("--data", tr.data, "Dataset directory")->required();
    c_tr->add_option("--out", tr.out, "Checkpoint path")->required();
    c_tr->add_option("--steps", tr.steps)->capture_default_str();
    c_tr->add_option("--lr", tr.lr)->capture_default_str();
    c_tr->add_option("--lr-schedule", tr.lr_schedule, "constant|cosine")->capture_default_str();
    c_tr->add_option("--policy", tr.policy, "all|paper")->capture_default_str();
    c_tr->add_option("--seed", tr.seed)->capture_default_str();
    c_tr->add_option("--batch", tr.batch)->capture_default_str();
    c_tr->add_option("--log-every", tr.log_every)->capture_default_str();
    c_tr->add_option("--beta-end", tr.beta_end, "Final beta of the linear schedule")->capture_default_str();
    c_tr->add_option("--inference-steps", tr.inference_steps)->capture_default_str();
    c_tr->add_option("--channels", tr.channels)->capture_default_str();
    c_tr->add_option("--heads", tr.heads)->capture_default_str();
    c_tr->add_option("--blocks", tr.blocks)->capture_default_str();
    c_tr->add_flag("--no-mask-attention", tr.no_mask_attention, "Plain cross-attention (ablation)");
    c_tr->add_flag("--separate-mask-projection", tr.separate_mask_projection);
    c_tr->add_flag("--mask-detail", tr.mask_detail, "Feed per-pixel mask cell contents instead of cell averages");
    c_tr->add_flag("--first-frame-model", tr.first_frame_model, "Train the single-frame mask-channel model");
    c_tr->add_option("--resume", tr.resume, "Train state file to continue from (use with --init)");
    c_tr->add_option("--init", tr.init, "Checkpoint to start from");

    GenerateArgs gen;
    auto* c_gen = app.add_subcommand("generate", "Generate a mask-steered video");
    c_gen->add_option("--ckpt", gen.ckpt)->required();
    c_gen->add_option("--masks", gen.masks, "Mask sequence directory")->required();
    c_gen->add_option("--prompt", gen.prompt)->required();
    c_gen->add_option("--alpha", gen.alpha, "First-frame noise share ratio")->capture_default_str();
    c_gen->add_option("--frames", gen.frames, "Frames per chunk")->capture_default_str();
    c_gen->add_option("--chunks", gen.chunks)->capture_default_str();
    c_gen->add_option("--seed", gen.seed)->capture_default_str();
    c_gen->add_option("--steps", gen.steps, "DDIM steps (0: checkpoint default)")->capture_default_str();
    c_gen->add_option("--out", gen.out)->required();
    c_gen->add_option("--first-frame-ckpt", gen.first_frame_ckpt, "Single-frame model; renderer if omitted");

    EvalArgs ev;
    auto* c_ev = app.add_subcommand("eval", "Score a video against masks and a prompt");
    c_ev->add_option("--video", ev.video)->required();
    c_ev->add_option("--masks", ev.masks)->required();
    c_ev->add_option("--prompt", ev.prompt)->required();
    c_ev->add_option("--report", ev.report)->required();
    c_ev->add_flag("--median-background", ev.median_background, "Estimate the background as the per-pixel median");

    ServeArgs sv;
    auto* c_sv = app.add_subcommand("serve", "HTTP job service");
    c_sv->add_option("--addr", sv.addr)->capture_default_str();
    c_sv->add_option("--ckpt", sv.ckpt);
    c_sv->add_option("--first-frame-ckpt", sv.first_frame_ckpt);
    c_sv->add_option("--home", sv.home, "Run directory (default $MASKMOTION_HOME)");
    c_sv->add_option("--workers", sv.workers)->capture_default_str();

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? 0 : 1;
    }

    try {
        if (*c_ds) return make_dataset(ds);
        if (*c_tr) return train(tr);
        if (*c_gen) return generate(gen);
        if (*c_ev) return evaluate(ev);
        if (*c_sv) return serve(sv);
    } catch (const mm::ValidationError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    }
    return 0;
}
