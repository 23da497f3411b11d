#include <CLI11.hpp>

#include "stsk/cli.hpp"

int main(int argc, char** argv) {
    CLI::App app{"stsk: spatial-temporal-semantic tracking toolkit"};
    app.require_subcommand(1);

    stsk::cli::GlobalOpts g;
    app.add_option("--seed", g.seed, "global seed")->capture_default_str();
    app.add_option("--jobs", g.jobs, "parallel workers for per-sequence work")
        ->capture_default_str();

    std::string spec_file, out_dir, data_dir, results_dir, report_dir, model_file, out_file;
    std::size_t count = 1;

    auto* synth = app.add_subcommand("synth", "generate synthetic benchmark sequences");
    synth->add_option("--spec", spec_file, "key=value motion spec file")->required();
    synth->add_option("--out", out_dir, "output dataset directory")->required();
    synth->add_option("--count", count, "number of sequences")->capture_default_str();

    stsk::cli::TrackOpts track_opts;
    auto* track = app.add_subcommand("track", "run the tracker over a dataset (OPE)");
    track->add_option("--model", track_opts.model_file, "model file from `stsk train`");
    track->add_option("--data", track_opts.data_dir, "dataset directory")->required();
    track->add_option("--out", track_opts.out_dir, "result directory")->required();
    track->add_flag("--no-temporal", track_opts.no_temporal, "freeze the temporal token");
    track->add_flag("--no-semantic", track_opts.no_semantic, "zero the language segment");
    track->add_flag("--oracle", track_opts.oracle, "copy ground truth to results");

    auto* eval = app.add_subcommand("eval", "evaluate result files against a dataset");
    eval->add_option("--data", data_dir, "dataset directory")->required();
    eval->add_option("--results", results_dir, "directory of <seq_id>.txt files")->required();
    eval->add_option("--report", report_dir, "report output directory")->required();

    auto* stats = app.add_subcommand("stats", "dataset statistics (brightness, speed, ...)");
    stats->add_option("--data", data_dir, "dataset directory")->required();
    stats->add_option("--report", report_dir, "report output directory")->required();

    stsk::cli::TrainOpts train_opts;
    auto* train = app.add_subcommand("train", "train the toy tracker on synthetic data");
    train->add_option("--spec", train_opts.spec_file, "key=value motion spec file")->required();
    train->add_option("--out", train_opts.out_file, "model output file")->required();
    train->add_option("--steps", train_opts.steps, "optimizer steps")->capture_default_str();
    train->add_option("--count", train_opts.count, "synthetic training sequences")
        ->capture_default_str();
    train->add_option("--lr", train_opts.lr, "learning rate")->capture_default_str();
    train->add_flag("--no-temporal", train_opts.no_temporal, "train without temporal modeling");
    train->add_flag("--no-semantic", train_opts.no_semantic, "train without language tokens");

    auto* selfcheck = app.add_subcommand("selfcheck", "run the built-in verification suites");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? 0 : stsk::cli::kExitBadInput;
    }

    return stsk::cli::run_guarded([&]() -> int {
        if (synth->parsed()) return stsk::cli::cmd_synth(spec_file, out_dir, count, g);
        if (track->parsed()) {
            if (!track_opts.oracle && track_opts.model_file.empty())
                throw stsk::ParseError("track: --model is required unless --oracle is given");
            return stsk::cli::cmd_track(track_opts, g);
        }
        if (eval->parsed()) return stsk::cli::cmd_eval(data_dir, results_dir, report_dir, g);
        if (stats->parsed()) return stsk::cli::cmd_stats(data_dir, report_dir, g);
        if (train->parsed()) return stsk::cli::cmd_train(train_opts, g);
        if (selfcheck->parsed()) return stsk::cli::cmd_selfcheck(g);
        return stsk::cli::kExitBadInput;
    });
}
