use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;
use std::time::Duration;

use clap::{Parser, Subcommand, ValueEnum};
use moodloop_core::aggregation::AggregationStrategy;
use moodloop_core::corpus::{analyze_corpus, write_report};
use moodloop_core::frame::haar::DetectParams;
use moodloop_core::frame::{
    decode_image_bytes, frame_digest, EmotionBackend, FaceDetector, FixtureBackend, FixtureDetector, FixtureLabels,
    HaarDetector, RemoteBackend,
};
use moodloop_server::config::ServerConfig;
use moodloop_server::{api, build_service};

#[derive(Parser)]
#[command(name = "moodloop", version, about = "Plays music that follows the listener's facial expression")]
struct Cli {
    #[command(subcommand)]
    command: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Run the HTTP service.
    Serve {
        #[arg(long)]
        config: PathBuf,
        /// Overrides `bind` from the config file.
        #[arg(long)]
        bind: Option<String>,
    },
    /// Label every image in a directory under one or both aggregation strategies.
    Analyze {
        #[arg(long)]
        corpus: PathBuf,
        #[arg(long, value_enum, default_value_t = BackendKind::Fixture)]
        backend: BackendKind,
        #[arg(long, value_enum, default_value_t = StrategyArg::Both)]
        strategy: StrategyArg,
        #[arg(long)]
        out: PathBuf,
        /// Fixture label file; defaults to `labels.txt` in the corpus.
        #[arg(long)]
        labels: Option<PathBuf>,
        /// Classifier service for `--backend real`.
        #[arg(long, default_value = "http://127.0.0.1:5000")]
        backend_url: String,
    },
    /// Print the key fixture files use for an image sent to the service.
    Digest { images: Vec<PathBuf> },
}

#[derive(Clone, Copy, ValueEnum)]
enum BackendKind {
    Real,
    Fixture,
}

#[derive(Clone, Copy, ValueEnum)]
enum StrategyArg {
    Both,
    Highest,
    Frequent,
}

impl StrategyArg {
    fn strategies(self) -> Vec<AggregationStrategy> {
        match self {
            StrategyArg::Both => AggregationStrategy::ALL.to_vec(),
            StrategyArg::Highest => vec![AggregationStrategy::HighestPercentage],
            StrategyArg::Frequent => vec![AggregationStrategy::MostFrequent],
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    let result = match cli.command {
        Cmd::Serve { config, bind } => serve(&config, bind),
        Cmd::Analyze { corpus, backend, strategy, out, labels, backend_url } => {
            analyze(&corpus, backend, strategy, &out, labels, &backend_url)
        }
        Cmd::Digest { images } => digest(&images),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(message) => {
            eprintln!("moodloop: {message}");
            ExitCode::FAILURE
        }
    }
}

fn serve(config_path: &Path, bind: Option<String>) -> Result<(), String> {
    let mut config = ServerConfig::load(config_path).map_err(|e| e.to_string())?;
    if let Some(bind) = bind {
        config.bind = bind;
    }
    let (service, report) = build_service(&config).map_err(|e| e.to_string())?;
    for mood in &report.missing_moods {
        log::warn!("mood {mood} has no directory and is unavailable");
    }
    for mood in &report.empty_moods {
        log::warn!("mood {mood} has no playable tracks and is unavailable");
    }
    for (path, why) in &report.skipped {
        log::warn!("skipped {path}: {why}");
    }
    log::info!(
        "library {}: {} playlists, {} tracks",
        config.library_root.display(),
        service.library().playlists().len(),
        service.library().track_count()
    );
    let app = api::router(Arc::new(service), config.static_dir.clone());

    let runtime = tokio::runtime::Runtime::new().map_err(|e| e.to_string())?;
    runtime.block_on(async move {
        let listener = tokio::net::TcpListener::bind(&config.bind)
            .await
            .map_err(|e| format!("binding {}: {e}", config.bind))?;
        log::info!("listening on http://{}", config.bind);
        axum::serve(listener, app)
            .with_graceful_shutdown(async {
                let _ = tokio::signal::ctrl_c().await;
            })
            .await
            .map_err(|e| e.to_string())
    })
}

fn analyze(
    corpus: &Path,
    backend: BackendKind,
    strategy: StrategyArg,
    out: &Path,
    labels: Option<PathBuf>,
    backend_url: &str,
) -> Result<(), String> {
    let (detector, classifier): (Box<dyn FaceDetector>, Box<dyn EmotionBackend>) = match backend {
        BackendKind::Fixture => {
            let path = labels.unwrap_or_else(|| corpus.join("labels.txt"));
            let labels = FixtureLabels::load(&path).map_err(|e| format!("{}: {e}", path.display()))?;
            (Box::new(FixtureDetector::new(labels.clone())), Box::new(FixtureBackend::new(&labels)))
        }
        BackendKind::Real => (
            Box::new(HaarDetector::frontal_face(DetectParams::default())),
            Box::new(RemoteBackend::new(backend_url, Duration::from_secs(30))),
        ),
    };
    let report = analyze_corpus(corpus, &*detector, &*classifier, &strategy.strategies()).map_err(|e| e.to_string())?;
    write_report(&report, out).map_err(|e| e.to_string())?;
    log::info!(
        "{} images with faces, {} without; report at {}",
        report.images.len(),
        report.no_faces.len(),
        out.display()
    );
    Ok(())
}

fn digest(images: &[PathBuf]) -> Result<(), String> {
    for path in images {
        let bytes = std::fs::read(path).map_err(|e| format!("{}: {e}", path.display()))?;
        let image = decode_image_bytes(&bytes).map_err(|e| format!("{}: {e}", path.display()))?;
        println!("{}  {}", frame_digest(&image), path.display());
    }
    Ok(())
}
