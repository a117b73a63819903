use std::fs;
use std::path::{Path, PathBuf};
use std::sync::{mpsc, Arc, OnceLock, RwLock, RwLockReadGuard};

use axum::http::StatusCode;
use image::RgbImage;
use tokio::sync::oneshot;

use mcae_core::annotation::{
    export_sparse, render_thumbnail, ClusterDecision, Progress, SessionStore,
};
use mcae_core::digest::{sha256_file, sha256_hex};
use mcae_core::raster::{encode_label_png, global_frame};
use mcae_core::Result;

use crate::error::ApiError;

type WriteRequest = (ClusterDecision, oneshot::Sender<Result<Progress>>);

/// Shared server state; `None` when no session is open.
#[derive(Clone, Default)]
pub struct AppState {
    session: Option<Arc<Session>>,
}

impl AppState {
    pub fn empty() -> Self {
        Self::default()
    }

    /// Opens a session directory. Thumbnails are cached under
    /// `<dir>/thumbnails`.
    pub fn open(dir: &Path) -> Result<Self> {
        let store = SessionStore::open(dir)?;
        Ok(Self::from_store(store, Some(dir.join("thumbnails"))))
    }

    pub fn from_store(store: SessionStore, cache_dir: Option<PathBuf>) -> Self {
        let store = Arc::new(RwLock::new(store));
        let (tx, rx) = mpsc::channel::<WriteRequest>();
        let owned = Arc::clone(&store);
        std::thread::Builder::new()
            .name("decision-writer".into())
            .spawn(move || {
                for (d, reply) in rx {
                    let mut s = owned.write().unwrap_or_else(|e| e.into_inner());
                    let r = s.record_decision(d).map(|()| s.progress());
                    drop(s);
                    let _ = reply.send(r);
                }
            })
            .expect("spawn writer thread");
        Self {
            session: Some(Arc::new(Session {
                store,
                writer: tx,
                image: OnceLock::new(),
                cache_dir,
            })),
        }
    }

    pub(crate) fn session(&self) -> std::result::Result<Arc<Session>, ApiError> {
        self.session.clone().ok_or_else(ApiError::no_session)
    }
}

pub(crate) struct Session {
    store: Arc<RwLock<SessionStore>>,
    writer: mpsc::Sender<WriteRequest>,
    /// Mosaic image and its digest, loaded on first use.
    image: OnceLock<std::result::Result<(Arc<RgbImage>, String), String>>,
    cache_dir: Option<PathBuf>,
}

impl Session {
    pub(crate) fn read(&self) -> RwLockReadGuard<'_, SessionStore> {
        self.store.read().unwrap_or_else(|e| e.into_inner())
    }

    /// Queues a decision for the writer and waits until it is durable.
    pub(crate) async fn submit(
        &self,
        d: ClusterDecision,
    ) -> std::result::Result<Progress, ApiError> {
        let (tx, rx) = oneshot::channel();
        self.writer
            .send((d, tx))
            .map_err(|_| ApiError::internal("decision writer stopped"))?;
        let r = rx
            .await
            .map_err(|_| ApiError::internal("decision writer stopped"))?;
        Ok(r?)
    }

    fn image(&self) -> std::result::Result<(Arc<RgbImage>, String), ApiError> {
        let path = self.read().image_path().map(Path::to_path_buf);
        let loaded = self.image.get_or_init(|| {
            let path = path.ok_or_else(|| "session has no imagery".to_string())?;
            let img = image::open(&path)
                .map_err(|e| format!("{}: {e}", path.display()))?
                .into_rgb8();
            let digest = sha256_file(&path).map_err(|e| e.to_string())?;
            Ok((Arc::new(img), digest))
        });
        loaded
            .clone()
            .map_err(|m| ApiError::new(StatusCode::SERVICE_UNAVAILABLE, "imagery_unavailable", m))
    }

    pub(crate) fn thumbnail(&self, mask_id: u64) -> std::result::Result<Vec<u8>, ApiError> {
        let (pixels, tile_rect, key) = {
            let store = self.read();
            let m = store
                .mask(mask_id)
                .ok_or(mcae_core::Error::UnknownMask(mask_id))?;
            let g = global_frame(m, store.grid())?;
            let key = format!("{:?}|{:?}|{:?}", m.tile, g.bbox(), g.runs());
            (g.to_pixels(), store.grid().tile_rect(m.tile), key)
        };
        let (image, digest) = self.image()?;
        let cached = self.cache_dir.as_ref().map(|d| {
            d.join(format!(
                "{}.png",
                sha256_hex(format!("{digest}|{key}").as_bytes())
            ))
        });
        if let Some(p) = &cached {
            if let Ok(bytes) = fs::read(p) {
                return Ok(bytes);
            }
        }
        let png = render_thumbnail(&image, &pixels, tile_rect)?;
        if let Some(p) = &cached {
            let tmp = p.with_extension("tmp");
            let stored = p
                .parent()
                .map_or(Ok(()), fs::create_dir_all)
                .and_then(|()| fs::write(&tmp, &png))
                .and_then(|()| fs::rename(&tmp, p));
            if let Err(e) = stored {
                log::warn!("thumbnail cache {}: {e}", p.display());
            }
        }
        Ok(png)
    }

    pub(crate) fn export_png(&self) -> std::result::Result<Vec<u8>, ApiError> {
        let raster = export_sparse(&self.read())?;
        Ok(encode_label_png(&raster)?)
    }
}
