#![allow(dead_code)]

use std::net::SocketAddr;

use tokio::sync::oneshot;
use tokio::task::JoinHandle;
use twin_core::engine::{init_world, EngineIo};
use twin_core::narrator::ScriptedNarrator;
use twin_core::persistence::{LogSink, SteppingClock};
use twin_core::run::{ClockMode, RunDir};
use twin_core::{Engine, EngineConfig, InitSpec, Narrator, StartMode, WorldState};
use twin_service::{bind, serve, Service, ServiceError};

pub fn golden_world() -> WorldState {
    let mut spec = InitSpec::gracia();
    spec.config = Some(EngineConfig {
        jitter_days: 0,
        ..EngineConfig::default()
    });
    init_world(&spec, 7).unwrap()
}

pub fn engine_with(narrator: Box<dyn Narrator>) -> Engine {
    let io = EngineIo {
        narrator,
        clock: Box::new(SteppingClock::default_epoch()),
        log: LogSink::in_memory(),
        audit: None,
    };
    Engine::start(golden_world(), StartMode::Fresh, io).unwrap()
}

pub struct Server {
    pub base: String,
    stop: Option<oneshot::Sender<()>>,
    task: JoinHandle<Result<(), ServiceError>>,
}

impl Server {
    pub async fn start(service: Service) -> Self {
        let listener = bind(SocketAddr::from(([127, 0, 0, 1], 0))).await.unwrap();
        let base = format!("http://{}", listener.local_addr().unwrap());
        let (stop, stopped) = oneshot::channel::<()>();
        let task = tokio::spawn(serve(service, listener, async move {
            let _ = stopped.await;
        }));
        Self {
            base,
            stop: Some(stop),
            task,
        }
    }

    pub async fn scripted() -> Self {
        Self::start(Service::start(
            engine_with(Box::new(ScriptedNarrator::builtin())),
            None,
        ))
        .await
    }

    /// Serves a run directory the way `twin serve` does.
    pub async fn on_disk(run: RunDir) -> Self {
        let engine = run
            .open_engine(Box::new(ScriptedNarrator::builtin()), ClockMode::Stepping)
            .unwrap();
        Self::start(Service::start(engine, Some(run))).await
    }

    pub fn url(&self, path: &str) -> String {
        format!("{}{}", self.base, path)
    }

    pub async fn stop(mut self) -> Result<(), ServiceError> {
        if let Some(stop) = self.stop.take() {
            let _ = stop.send(());
        }
        self.task.await.unwrap()
    }
}
