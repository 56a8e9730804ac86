//! `toy-serve`: the toy model behind the HTTP wire protocol.

use std::io::Write;
use std::sync::Arc;

use gencorr::backend::{wire, Backend};
use gencorr::{Error, Result};
use tiny_http::{Header, Response, Server};

pub fn serve(backend: Arc<dyn Backend>, addr: &str, max_requests: Option<usize>) -> Result<()> {
    let server = Server::http(addr).map_err(|e| Error::InvalidInput(format!("cannot listen on {addr}: {e}")))?;
    let local = server
        .server_addr()
        .to_ip()
        .ok_or_else(|| Error::InvalidInput("server has no IP address".into()))?;
    let mut stdout = std::io::stdout();
    writeln!(stdout, "listening on http://{local}")?;
    stdout.flush()?;
    let mut handled = 0usize;
    std::thread::scope(|scope| {
        for mut request in server.incoming_requests() {
            let backend = Arc::clone(&backend);
            scope.spawn(move || {
                let mut body = Vec::new();
                let _ = request.as_reader().read_to_end(&mut body);
                let method = request.method().as_str().to_uppercase();
                let (status, value) = wire::handle(backend.as_ref(), &method, request.url(), &body);
                let mut response = Response::from_string(value.to_string())
                    .with_status_code(status)
                    .with_header(Header::from_bytes("Content-Type", "application/json").expect("static header"));
                if let Some(id) = request
                    .headers()
                    .iter()
                    .find(|h| h.field.equiv("X-Request-Id"))
                    .map(|h| h.value.clone())
                {
                    response = response.with_header(Header::from_bytes("X-Request-Id", id.as_bytes()).expect("echoed header"));
                }
                let _ = request.respond(response);
            });
            handled += 1;
            if max_requests.is_some_and(|m| handled >= m) {
                break;
            }
        }
    });
    Ok(())
}
