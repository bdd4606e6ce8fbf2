# config/urls.py
from django.contrib import admin
from django.urls import path

urlpatterns = [
    # Run ledger browser
    path('admin/', admin.site.urls),
]
