//! HTTP client for a remote correction service, plus a stub server.
//!
//! Wire protocol `v1`:
//!
//! - `POST /v1/correct` with JSON body
//!   `{image_png_b64, mask_png_b64, depth_npyish_b64, prompt, noise_level,
//!     rng_seed, view_id, frame}`.
//!   Images are 8-bit PNG (RGB for the image, grayscale 0/255 for the mask),
//!   base64 (standard alphabet, padded). Depth is a NumPy `.npy` v1.0 buffer:
//!   little-endian f32, C-order, 2-D — see [`crate::imgio::encode_f32_npy`].
//! - Response JSON: `{image_png_b64, object_mask_png_b64?}` with the same
//!   encodings; the image must match the request shape.
//! - `GET /v1/health` answers `{"status":"ok","protocol":"v1"}`.
//!
//! The client short-circuits λ = 0 without a network call, retries transport
//! failures and 5xx with exponential backoff, and re-composites every pixel
//! outside the mask from the original image, so the corrector contract holds
//! regardless of server behavior.

use super::{composite_outside_mask, Correction, Corrector, CorrectorRequest};
use crate::error::CorrectorError;
use crate::imgio;
use base64::engine::general_purpose::STANDARD as BASE64;
use base64::Engine;
use serde::{Deserialize, Serialize};
use std::time::Duration;

/// JSON body of `POST /v1/correct`.
#[derive(Debug, Serialize, Deserialize)]
pub struct WireCorrectRequest {
    pub image_png_b64: String,
    pub mask_png_b64: String,
    pub depth_npyish_b64: String,
    pub prompt: String,
    pub noise_level: f64,
    pub rng_seed: u64,
    pub view_id: u32,
    pub frame: u64,
}

/// JSON body of the `POST /v1/correct` response.
#[derive(Debug, Serialize, Deserialize)]
pub struct WireCorrectResponse {
    pub image_png_b64: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub object_mask_png_b64: Option<String>,
}

/// Remote endpoint settings.
#[derive(Debug, Clone)]
pub struct EndpointConfig {
    /// Base URL, e.g. `http://127.0.0.1:8641`.
    pub url: String,
    pub timeout: Duration,
    /// Total attempts per request (first try included).
    pub attempts: u32,
    /// Backoff before retry k is `backoff_base · 2^(k−1)`.
    pub backoff_base: Duration,
}

impl EndpointConfig {
    pub fn new(url: impl Into<String>) -> Self {
        Self {
            url: url.into(),
            timeout: Duration::from_secs(120),
            attempts: 3,
            backoff_base: Duration::from_secs(1),
        }
    }
}

/// Corrector backed by a remote service speaking protocol `v1`.
pub struct RemoteCorrector {
    config: EndpointConfig,
    agent: ureq::Agent,
}

impl RemoteCorrector {
    pub fn new(config: EndpointConfig) -> Self {
        let agent = ureq::Agent::config_builder()
            .timeout_global(Some(config.timeout))
            .build()
            .into();
        Self { config, agent }
    }

    /// `GET /v1/health`; `Ok` when the service answers 2xx.
    pub fn health(&self) -> Result<(), CorrectorError> {
        let url = format!("{}/v1/health", self.config.url.trim_end_matches('/'));
        match self.agent.get(&url).call() {
            Ok(_) => Ok(()),
            Err(ureq::Error::StatusCode(code)) => {
                Err(CorrectorError::Status { status: code, attempts: 1 })
            }
            Err(e) => Err(CorrectorError::Transport { attempts: 1, message: e.to_string() }),
        }
    }

    pub fn encode_request(request: &CorrectorRequest) -> Result<WireCorrectRequest, CorrectorError> {
        let image_png = imgio::encode_rgb_png(&request.image)
            .map_err(|e| CorrectorError::BadRequest(e.to_string()))?;
        let mask_png = imgio::encode_mask_png(&request.mask)
            .map_err(|e| CorrectorError::BadRequest(e.to_string()))?;
        let depth_npy = imgio::encode_f32_npy(&request.depth);
        Ok(WireCorrectRequest {
            image_png_b64: BASE64.encode(image_png),
            mask_png_b64: BASE64.encode(mask_png),
            depth_npyish_b64: BASE64.encode(depth_npy),
            prompt: request.prompt.clone(),
            noise_level: request.noise_level,
            rng_seed: request.rng_seed,
            view_id: request.view_id,
            frame: request.frame as u64,
        })
    }

    fn post_once(&self, body: &WireCorrectRequest) -> Result<WireCorrectResponse, AttemptError> {
        let url = format!("{}/v1/correct", self.config.url.trim_end_matches('/'));
        let mut response = self
            .agent
            .post(&url)
            .send_json(body)
            .map_err(|e| match e {
                ureq::Error::StatusCode(code) => AttemptError::Status(code),
                other => AttemptError::Transport(other.to_string()),
            })?;
        response
            .body_mut()
            .read_json::<WireCorrectResponse>()
            .map_err(|e| AttemptError::Malformed(format!("response body: {e}")))
    }
}

enum AttemptError {
    Transport(String),
    Status(u16),
    Malformed(String),
}

impl Corrector for RemoteCorrector {
    fn correct(&self, request: &CorrectorRequest) -> Result<Correction, CorrectorError> {
        request.validate()?;
        if request.noise_level == 0.0 {
            // Contract: λ=0 is the identity; skip the network entirely.
            return Ok(Correction { image: request.image.clone(), object_mask: None });
        }
        let body = Self::encode_request(request)?;

        let mut attempt = 0u32;
        let wire = loop {
            attempt += 1;
            match self.post_once(&body) {
                Ok(resp) => break resp,
                Err(AttemptError::Malformed(m)) => return Err(CorrectorError::Malformed(m)),
                Err(AttemptError::Status(code)) if (400..500).contains(&code) => {
                    return Err(CorrectorError::Status { status: code, attempts: attempt });
                }
                Err(e) if attempt >= self.config.attempts => {
                    return Err(match e {
                        AttemptError::Transport(m) => {
                            CorrectorError::Transport { attempts: attempt, message: m }
                        }
                        AttemptError::Status(code) => {
                            CorrectorError::Status { status: code, attempts: attempt }
                        }
                        AttemptError::Malformed(m) => CorrectorError::Malformed(m),
                    });
                }
                Err(_) => {
                    let backoff = self.config.backoff_base * 2u32.pow(attempt - 1);
                    std::thread::sleep(backoff);
                }
            }
        };

        let png = BASE64
            .decode(&wire.image_png_b64)
            .map_err(|e| CorrectorError::Malformed(format!("image_png_b64: {e}")))?;
        let image = imgio::decode_rgb_png(&png)
            .map_err(|e| CorrectorError::Malformed(format!("image png: {e}")))?;
        if image.dim() != request.image.dim() {
            return Err(CorrectorError::Malformed(format!(
                "response image {:?} does not match request {:?}",
                image.dim(),
                request.image.dim()
            )));
        }
        let object_mask = match &wire.object_mask_png_b64 {
            None => None,
            Some(b64) => {
                let bytes = BASE64
                    .decode(b64)
                    .map_err(|e| CorrectorError::Malformed(format!("object_mask_png_b64: {e}")))?;
                let mask = imgio::decode_mask_png(&bytes)
                    .map_err(|e| CorrectorError::Malformed(format!("object mask png: {e}")))?;
                if mask.dim() != request.mask.dim() {
                    return Err(CorrectorError::Malformed(format!(
                        "response mask {:?} does not match request {:?}",
                        mask.dim(),
                        request.mask.dim()
                    )));
                }
                Some(mask)
            }
        };
        // Enforce background immutability client-side.
        let image = composite_outside_mask(&image, &request.image, &request.mask);
        Ok(Correction { image, object_mask })
    }

    fn name(&self) -> &str {
        "remote"
    }
}

pub mod stub {
    //! Minimal in-process server speaking protocol `v1`, for tests and local
    //! experiments. Not a production server.

    use super::*;
    use std::io::{BufRead, BufReader, Read, Write};
    use std::net::{TcpListener, TcpStream};
    use std::sync::atomic::{AtomicBool, Ordering};
    use std::sync::Arc;

    /// How the stub answers `POST /v1/correct`.
    #[derive(Debug, Clone, Copy, PartialEq, Eq)]
    pub enum StubBehavior {
        /// Return the request image unchanged (mask echoed as object mask).
        Echo,
        /// Return an 8×8 black image regardless of the request shape.
        WrongShape,
        /// Always answer 500.
        Error500,
    }

    /// Running stub server; shuts down on drop.
    pub struct StubServer {
        addr: String,
        stop: Arc<AtomicBool>,
        handle: Option<std::thread::JoinHandle<()>>,
    }

    impl StubServer {
        pub fn start(behavior: StubBehavior) -> std::io::Result<StubServer> {
            let listener = TcpListener::bind("127.0.0.1:0")?;
            let addr = format!("http://{}", listener.local_addr()?);
            let stop = Arc::new(AtomicBool::new(false));
            let stop_thread = stop.clone();
            let handle = std::thread::spawn(move || {
                for conn in listener.incoming() {
                    if stop_thread.load(Ordering::SeqCst) {
                        break;
                    }
                    if let Ok(stream) = conn {
                        let _ = handle_connection(stream, behavior);
                    }
                }
            });
            Ok(StubServer { addr, stop, handle: Some(handle) })
        }

        /// Base URL (`http://127.0.0.1:<port>`).
        pub fn url(&self) -> &str {
            &self.addr
        }
    }

    impl Drop for StubServer {
        fn drop(&mut self) {
            self.stop.store(true, Ordering::SeqCst);
            // Unblock the accept loop.
            if let Some(hostport) = self.addr.strip_prefix("http://") {
                let _ = TcpStream::connect(hostport);
            }
            if let Some(h) = self.handle.take() {
                let _ = h.join();
            }
        }
    }

    fn handle_connection(stream: TcpStream, behavior: StubBehavior) -> std::io::Result<()> {
        let mut reader = BufReader::new(stream.try_clone()?);
        let mut request_line = String::new();
        reader.read_line(&mut request_line)?;
        let mut content_length = 0usize;
        loop {
            let mut line = String::new();
            reader.read_line(&mut line)?;
            let line = line.trim_end();
            if line.is_empty() {
                break;
            }
            if let Some(v) = line.to_ascii_lowercase().strip_prefix("content-length:") {
                content_length = v.trim().parse().unwrap_or(0);
            }
        }
        let mut body = vec![0u8; content_length];
        reader.read_exact(&mut body)?;

        let mut stream = stream;
        if request_line.starts_with("GET /v1/health") {
            return write_json(&mut stream, 200, r#"{"status":"ok","protocol":"v1"}"#);
        }
        if !request_line.starts_with("POST /v1/correct") {
            return write_json(&mut stream, 404, r#"{"error":"not found"}"#);
        }
        match behavior {
            StubBehavior::Error500 => write_json(&mut stream, 500, r#"{"error":"boom"}"#),
            StubBehavior::WrongShape => {
                let tiny = ndarray::Array3::<f64>::zeros((8, 8, 3));
                let png = imgio::encode_rgb_png(&tiny).unwrap();
                let resp = WireCorrectResponse {
                    image_png_b64: BASE64.encode(png),
                    object_mask_png_b64: None,
                };
                write_json(&mut stream, 200, &serde_json::to_string(&resp).unwrap())
            }
            StubBehavior::Echo => {
                let parsed: WireCorrectRequest = match serde_json::from_slice(&body) {
                    Ok(p) => p,
                    Err(_) => return write_json(&mut stream, 400, r#"{"error":"bad body"}"#),
                };
                let resp = WireCorrectResponse {
                    image_png_b64: parsed.image_png_b64,
                    object_mask_png_b64: Some(parsed.mask_png_b64),
                };
                write_json(&mut stream, 200, &serde_json::to_string(&resp).unwrap())
            }
        }
    }

    fn write_json(stream: &mut TcpStream, status: u16, body: &str) -> std::io::Result<()> {
        let reason = match status {
            200 => "OK",
            400 => "Bad Request",
            404 => "Not Found",
            _ => "Internal Server Error",
        };
        write!(
            stream,
            "HTTP/1.1 {status} {reason}\r\nContent-Type: application/json\r\nContent-Length: {}\r\nConnection: close\r\n\r\n{body}",
            body.len()
        )?;
        stream.flush()
    }
}
